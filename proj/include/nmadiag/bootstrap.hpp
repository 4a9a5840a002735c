#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nmadiag/diagnostics.hpp"
#include "nmadiag/model.hpp"

namespace nmadiag {

struct bootstrap_config {
  int replicates = 2400;
  std::uint64_t seed = 1729;
  std::vector<double> percentiles = {0.025, 0.05, 0.95, 0.975};
  bool parallel = true;
  double max_failure_rate = 0.01;
};

// Independent substream per (seed, stream, replicate); replicate results are
// merged by index, so scheduling order never affects output.
std::mt19937_64 replicate_rng(std::uint64_t seed, std::uint32_t stream, std::uint64_t replicate);

// One parametric draw: y_i ~ MVN(X_i mu, tau2 P + S_i) per trial, masks and
// S_i carried over unchanged.
std::vector<contrast_data> resample_dataset(const std::vector<contrast_data>& data, int p,
                                            const model_fit& fit, std::mt19937_64& rng);

struct bootstrap_distribution {
  std::vector<double> samples;  // replicate order, failures removed
  std::map<double, double> percentile_of;
  int failures = 0;
};

struct loo_bootstrap_result {
  // aligned with the residual records of run_loo_diagnostics
  std::vector<bootstrap_distribution> psi;
  // aligned with trial order
  std::vector<bootstrap_distribution> covratio;
  std::vector<bootstrap_distribution> psiratio;
  int requested = 0;
  int failed = 0;  // whole-replicate fit failures (skipped)
};

// Algorithm-1 engine: per replicate resample from the REML fit, rerun the
// leave-one-out sweep, and collect psi / COVRATIO / PSIRATIO from the shared
// draws. Structurally non-computable slots (disconnected leave-one-out
// networks) stay empty and do not count as failures.
loo_bootstrap_result bootstrap_loo_sweep(const std::vector<contrast_data>& data, int p,
                                         const model_fit& fit, const fit_options& opts,
                                         rebase_policy policy, const bootstrap_config& config);

// Per-statistic views over the same engine.
loo_bootstrap_result bootstrap_residuals(const std::vector<contrast_data>& data, int p,
                                         const model_fit& fit, const fit_options& opts,
                                         rebase_policy policy, const bootstrap_config& config);

enum class trial_measure { covratio, psiratio };

std::vector<bootstrap_distribution> bootstrap_trial_measures(
    const std::vector<contrast_data>& data, int p, const model_fit& fit,
    const fit_options& opts, rebase_policy policy, const bootstrap_config& config,
    trial_measure which);

// (1 + #{samples >= observed}) / (n + 1); never exactly zero.
double bootstrap_p_value(const std::vector<double>& samples, double observed);

struct lrt_bootstrap_result {
  bootstrap_distribution T;
  double p95 = 0.0;
  double p_value = 1.0;  // (1 + #{T_b >= T_obs}) / (B + 1)
  int requested = 0;
  int failed = 0;
};

// Algorithm-2 engine for one trial: resample from the null ML fit on the
// re-based dataset, refit null and shift models per replicate.
lrt_bootstrap_result bootstrap_lrt(const std::vector<contrast_data>& data, int p,
                                   int trial_index, rebase_policy policy,
                                   const bootstrap_config& config,
                                   const fit_options& opts = {fit_method::ml});

}  // namespace nmadiag
