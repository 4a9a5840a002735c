#pragma once

#include <vector>

#include "nmadiag/types.hpp"

namespace nmadiag {

enum class fit_method { reml, ml };

struct fit_options {
  fit_method method = fit_method::reml;
  double tau2_max = 10.0;
  double tol = 1e-10;
  int max_iter = 200;
};

struct model_fit {
  Eigen::VectorXd mu;      // p
  Eigen::MatrixXd mu_cov;  // (sum_i X_i' W_i X_i)^{-1}
  double tau2 = 0.0;
  double loglik = 0.0;     // maximized objective (restricted under REML)
  fit_method method = fit_method::reml;
  bool converged = false;
  int iterations = 0;
  bool at_upper_bound = false;
  int n_trials = 0;
};

// View over a dataset; cheap to restrict for leave-one-out work.
using dataset_view = std::vector<const contrast_data*>;

dataset_view make_view(const std::vector<contrast_data>& data);
dataset_view make_view_excluding(const std::vector<contrast_data>& data, int skip_index);

// W_i = (tau2 * P + S_i)^{-1} on the observed components.
Eigen::MatrixXd marginal_precision(const contrast_data& cd, double tau2);

// GLS profile: mu(tau2) solves sum_i X_i' W_i (y_i - X_i mu) = 0.
void profile_mu(const dataset_view& data, int p, double tau2, Eigen::VectorXd& mu,
                Eigen::MatrixXd* mu_cov = nullptr);

// l = -1/2 sum_i [ log det(tau2 P + S_i) + r_i' W_i r_i + p_i log 2pi ]
double log_likelihood(const dataset_view& data, int p, const Eigen::VectorXd& mu,
                      double tau2);

// l_RL(tau2) = l(mu(tau2), tau2) - 1/2 log det(sum_i X_i' W_i X_i); the
// additive constant is fixed to zero.
double restricted_log_likelihood(const dataset_view& data, int p, double tau2);

model_fit fit_model(const dataset_view& data, int p, const fit_options& opts = {});
model_fit fit_model(const std::vector<contrast_data>& data, int p,
                    const fit_options& opts = {});

// Temporary comparator for re-basing a trial to head-to-head form. The arm
// choice only flips residual signs; first_arm reproduces the case-study table
// signs and is the default.
enum class rebase_policy { first_arm, lowest_index };

int rebase_reference_arm(const contrast_data& cd, rebase_policy policy);

struct mean_shift_fit {
  int shifted_trial = 0;
  std::vector<comparison> comps;  // re-based rows of the shifted trial
  Eigen::VectorXd eta;            // y'_i - X'_i mu at the optimum
  Eigen::VectorXd mu;
  double tau2 = 0.0;
  double loglik = 0.0;       // maximized shift log-likelihood
  double null_loglik = 0.0;  // ML maximum of the no-shift model on the same data
  double T = 0.0;            // -2 (null - shift), floored at 0
  int df = 0;                // q_i
  bool converged = false;
};

// ML mean-shift fit for one trial. Both the null and the shifted model are
// evaluated on the same dataset in which the target trial is re-based to
// head-to-head form (pseudo-arm dropped), so the likelihoods are comparable.
// Freeing eta makes the shifted trial's quadratic term vanish at the optimum
// (eta = y'_i - X'_i mu), leaving its log-det as a penalty on tau2.
mean_shift_fit fit_mean_shift(const std::vector<contrast_data>& data, int p,
                              int trial_index, rebase_policy policy = rebase_policy::first_arm,
                              const fit_options& opts = {fit_method::ml});

}  // namespace nmadiag
