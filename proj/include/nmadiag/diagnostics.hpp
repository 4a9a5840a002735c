#pragma once

#include <optional>
#include <vector>

#include "nmadiag/model.hpp"
#include "nmadiag/types.hpp"

namespace nmadiag {

struct residual_record {
  int trial_id = 0;
  std::string study;
  comparison comp;  // head-to-head pair after re-basing
  bool computable = true;
  double phi = 0.0;  // naive studentized residual (full-data fit)
  double psi = 0.0;  // leave-one-trial-out studentized residual
  std::optional<double> boot_lo, boot_hi;  // 2.5th / 97.5th percentiles
  bool flagged = false;
};

struct influence_record {
  int trial_id = 0;
  std::string study;
  bool computable = true;
  double covratio = 0.0;
  std::optional<double> psiratio;  // empty when the full-fit tau2 is 0
  std::optional<double> covratio_p05, psiratio_p05;
  bool covratio_flagged = false;
  bool psiratio_flagged = false;
};

struct lrt_record {
  int trial_id = 0;
  std::string study;
  bool computable = true;
  double T = 0.0;
  int df = 0;
  double chi2_p = 1.0;
  std::optional<double> boot_p95, boot_p;
  bool flagged = false;
};

// R_i = V^{-1/2} (y_i - X_i mu),  V = (tau2 P + S_i) - X_i V[mu] X_i',
// via the symmetric square root; components in the trial's global coding.
Eigen::VectorXd multivariate_residual(const contrast_data& cd, const model_fit& fit, int p);

model_fit loo_fit(const std::vector<contrast_data>& data, int p, int leave_out,
                  const fit_options& opts = {});

// Comparison-specific residuals of one trial in re-based head-to-head form.
// phi scales by the full-fit variance (tau2 P + S)' - X V[mu] X'; psi by the
// leave-one-out predictive variance (tau2 P + S)' + X V[mu^(-i)] X'. Passing
// loo == nullptr leaves the psi fields unset.
std::vector<residual_record> studentized_residuals(const std::vector<contrast_data>& data,
                                                   int p, int trial_index,
                                                   const model_fit& full,
                                                   const model_fit* loo,
                                                   rebase_policy policy);

// det(V[mu^(-i)]) / det(V[mu])
double covratio(const model_fit& full, const model_fit& loo);

// det(Psi^(-i)) / det(Psi) = (tau2^(-i)/tau2)^p; empty when tau2 = 0.
std::optional<double> psiratio(const model_fit& full, const model_fit& loo, int p);

lrt_record lrt_mean_shift(const std::vector<contrast_data>& data, int p, int trial_index,
                          rebase_policy policy = rebase_policy::first_arm,
                          const fit_options& opts = {fit_method::ml});

// Identifiability of every per-trial diagnostic: the network without trial
// `leave_out` must still cover and connect all p+1 treatments.
bool loo_identifiable(const std::vector<contrast_data>& data, int p, int leave_out);

struct loo_sweep {
  model_fit full;
  std::vector<std::optional<model_fit>> fits;  // empty slot = not computable
  std::vector<residual_record> residuals;
  std::vector<influence_record> influence;
};

// Full-data REML fit plus the N leave-one-out refits and the derived psi /
// COVRATIO / PSIRATIO records. The refits are independent; `parallel` selects
// the OpenMP kernel, the serial loop is the reference implementation.
loo_sweep run_loo_diagnostics(const std::vector<contrast_data>& data, int p,
                              const fit_options& opts = {},
                              rebase_policy policy = rebase_policy::first_arm,
                              bool parallel = true);

std::vector<lrt_record> run_lrt_tests(const std::vector<contrast_data>& data, int p,
                                      rebase_policy policy = rebase_policy::first_arm,
                                      const fit_options& opts = {fit_method::ml},
                                      bool parallel = true);

}  // namespace nmadiag
