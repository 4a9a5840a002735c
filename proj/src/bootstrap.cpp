#include "nmadiag/bootstrap.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "nmadiag/ingest.hpp"
#include "nmadiag/stats.hpp"

namespace nmadiag {

namespace {

constexpr double quiet_nan = std::numeric_limits<double>::quiet_NaN();

Eigen::MatrixXd marginal_cov(const contrast_data& cd, double tau2) {
  Eigen::MatrixXd M = cd.S;
  M.array() += 0.5 * tau2;
  M.diagonal().array() += 0.5 * tau2;
  return M;
}

struct trial_sampler {
  Eigen::VectorXd mean;
  Eigen::MatrixXd chol;  // lower factor of tau2 P + S
};

std::vector<trial_sampler> make_samplers(const std::vector<contrast_data>& data, int p,
                                         const model_fit& fit) {
  std::vector<trial_sampler> samplers;
  samplers.reserve(data.size());
  for (const auto& cd : data) {
    Eigen::LLT<Eigen::MatrixXd> llt(marginal_cov(cd, fit.tau2));
    if (llt.info() != Eigen::Success)
      throw bootstrap_error("resampling covariance not positive definite for trial '" +
                            cd.label + "'");
    samplers.push_back({cd.design(p) * fit.mu, Eigen::MatrixXd(llt.matrixL())});
  }
  return samplers;
}

void draw_into(std::vector<contrast_data>& replicate,
               const std::vector<trial_sampler>& samplers, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (size_t i = 0; i < replicate.size(); ++i) {
    Eigen::VectorXd z(replicate[i].rows());
    for (int j = 0; j < z.size(); ++j) z(j) = normal(rng);
    replicate[i].y = samplers[i].mean + samplers[i].chol * z;
  }
}

void attach_percentiles(bootstrap_distribution& dist, const std::vector<double>& qs) {
  if (dist.samples.empty()) return;
  for (double q : qs) dist.percentile_of[q] = percentile(dist.samples, q);
}

int failure_ceiling(const bootstrap_config& config) {
  return static_cast<int>(config.max_failure_rate * config.replicates);
}

}  // namespace

std::mt19937_64 replicate_rng(std::uint64_t seed, std::uint32_t stream,
                              std::uint64_t replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), stream,
                    static_cast<std::uint32_t>(replicate & 0xffffffffu),
                    static_cast<std::uint32_t>(replicate >> 32)};
  return std::mt19937_64(seq);
}

std::vector<contrast_data> resample_dataset(const std::vector<contrast_data>& data, int p,
                                            const model_fit& fit, std::mt19937_64& rng) {
  if (!fit.converged) throw bootstrap_error("resample_dataset requires a converged fit");
  const auto samplers = make_samplers(data, p, fit);
  std::vector<contrast_data> replicate = data;
  draw_into(replicate, samplers, rng);
  return replicate;
}

loo_bootstrap_result bootstrap_loo_sweep(const std::vector<contrast_data>& data, int p,
                                         const model_fit& fit, const fit_options& opts,
                                         rebase_policy policy,
                                         const bootstrap_config& config) {
  if (config.replicates < 1) throw bootstrap_error("replicates must be >= 1");
  const int n = static_cast<int>(data.size());
  const int B = config.replicates;
  const auto samplers = make_samplers(data, p, fit);

  // structural computability is y-independent, so decide it once
  std::vector<bool> identifiable(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    identifiable[static_cast<size_t>(i)] = loo_identifiable(data, p, i);

  // residual slots in sweep order: (trial, re-based comparison)
  std::vector<int> slot_trial;
  for (int i = 0; i < n; ++i) {
    const auto& cd = data[static_cast<size_t>(i)];
    const auto map = make_rebase_map(cd, rebase_reference_arm(cd, policy));
    for (size_t j = 0; j < map.comps.size(); ++j) slot_trial.push_back(i);
  }
  const int n_slots = static_cast<int>(slot_trial.size());

  struct replicate_out {
    bool ok = false;
    std::vector<double> psi, cov, psir;  // NaN = no value this replicate
  };
  std::vector<replicate_out> slots(static_cast<size_t>(B));

  auto one = [&](int b) {
    auto& out = slots[static_cast<size_t>(b)];
    out.psi.assign(static_cast<size_t>(n_slots), quiet_nan);
    out.cov.assign(static_cast<size_t>(n), quiet_nan);
    out.psir.assign(static_cast<size_t>(n), quiet_nan);
    try {
      auto rng = replicate_rng(config.seed, 1u, static_cast<std::uint64_t>(b));
      std::vector<contrast_data> rep = data;
      draw_into(rep, samplers, rng);
      const model_fit full_b = fit_model(rep, p, opts);
      int slot = 0;
      for (int i = 0; i < n; ++i) {
        const int rows = static_cast<int>(
            data[static_cast<size_t>(i)].arm_treatments.size() - 1);
        if (!identifiable[static_cast<size_t>(i)]) {
          slot += rows;
          continue;
        }
        const model_fit loo_b = loo_fit(rep, p, i, opts);
        const auto recs = studentized_residuals(rep, p, i, full_b, &loo_b, policy);
        for (const auto& rec : recs) out.psi[static_cast<size_t>(slot++)] = rec.psi;
        out.cov[static_cast<size_t>(i)] = covratio(full_b, loo_b);
        if (auto pr = psiratio(full_b, loo_b, p)) out.psir[static_cast<size_t>(i)] = *pr;
      }
      out.ok = true;
    } catch (...) {
      out.ok = false;
    }
  };

  if (config.parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int b = 0; b < B; ++b) one(b);
  } else {
    for (int b = 0; b < B; ++b) one(b);
  }

  loo_bootstrap_result result;
  result.requested = B;
  result.psi.resize(static_cast<size_t>(n_slots));
  result.covratio.resize(static_cast<size_t>(n));
  result.psiratio.resize(static_cast<size_t>(n));
  for (int b = 0; b < B; ++b) {
    const auto& out = slots[static_cast<size_t>(b)];
    if (!out.ok) {
      ++result.failed;
      continue;
    }
    for (int s = 0; s < n_slots; ++s)
      if (!std::isnan(out.psi[static_cast<size_t>(s)]))
        result.psi[static_cast<size_t>(s)].samples.push_back(out.psi[static_cast<size_t>(s)]);
    for (int i = 0; i < n; ++i) {
      if (!std::isnan(out.cov[static_cast<size_t>(i)]))
        result.covratio[static_cast<size_t>(i)].samples.push_back(
            out.cov[static_cast<size_t>(i)]);
      if (!std::isnan(out.psir[static_cast<size_t>(i)]))
        result.psiratio[static_cast<size_t>(i)].samples.push_back(
            out.psir[static_cast<size_t>(i)]);
    }
  }
  if (result.failed > failure_ceiling(config))
    throw bootstrap_error("bootstrap failure rate exceeded: " +
                          std::to_string(result.failed) + " of " + std::to_string(B) +
                          " replicates failed");
  for (auto& d : result.psi) {
    d.failures = B - result.failed - static_cast<int>(d.samples.size());
    attach_percentiles(d, config.percentiles);
  }
  for (auto& d : result.covratio) {
    d.failures = B - result.failed - static_cast<int>(d.samples.size());
    attach_percentiles(d, config.percentiles);
  }
  for (auto& d : result.psiratio) {
    d.failures = B - result.failed - static_cast<int>(d.samples.size());
    attach_percentiles(d, config.percentiles);
  }
  return result;
}

loo_bootstrap_result bootstrap_residuals(const std::vector<contrast_data>& data, int p,
                                         const model_fit& fit, const fit_options& opts,
                                         rebase_policy policy,
                                         const bootstrap_config& config) {
  auto result = bootstrap_loo_sweep(data, p, fit, opts, policy, config);
  result.covratio.clear();
  result.psiratio.clear();
  return result;
}

std::vector<bootstrap_distribution> bootstrap_trial_measures(
    const std::vector<contrast_data>& data, int p, const model_fit& fit,
    const fit_options& opts, rebase_policy policy, const bootstrap_config& config,
    trial_measure which) {
  auto result = bootstrap_loo_sweep(data, p, fit, opts, policy, config);
  return which == trial_measure::covratio ? std::move(result.covratio)
                                          : std::move(result.psiratio);
}

double bootstrap_p_value(const std::vector<double>& samples, double observed) {
  int exceed = 0;
  for (double s : samples)
    if (s >= observed) ++exceed;
  return (1.0 + exceed) / (static_cast<double>(samples.size()) + 1.0);
}

lrt_bootstrap_result bootstrap_lrt(const std::vector<contrast_data>& data, int p,
                                   int trial_index, rebase_policy policy,
                                   const bootstrap_config& config, const fit_options& opts) {
  if (config.replicates < 1) throw bootstrap_error("replicates must be >= 1");
  if (!loo_identifiable(data, p, trial_index))
    throw bootstrap_error("trial '" + data[static_cast<size_t>(trial_index)].label +
                          "' leaves a disconnected network; statistic not computable");

  fit_options ml = opts;
  ml.method = fit_method::ml;

  const auto observed = fit_mean_shift(data, p, trial_index, policy, ml);

  // the null model lives on the re-based dataset D_i
  const contrast_data& target = data[static_cast<size_t>(trial_index)];
  const auto map = make_rebase_map(target, rebase_reference_arm(target, policy));
  std::vector<contrast_data> base;
  base.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i)
    if (static_cast<int>(i) != trial_index) base.push_back(data[i]);
  base.push_back(apply_rebase(target, map));
  const int shifted = static_cast<int>(base.size()) - 1;

  const model_fit null_fit = fit_model(base, p, ml);
  const auto samplers = make_samplers(base, p, null_fit);

  const int B = config.replicates;
  std::vector<double> draws(static_cast<size_t>(B), quiet_nan);
  auto one = [&](int b) {
    try {
      auto rng = replicate_rng(config.seed, 100u + static_cast<std::uint32_t>(trial_index),
                               static_cast<std::uint64_t>(b));
      std::vector<contrast_data> rep = base;
      draw_into(rep, samplers, rng);
      draws[static_cast<size_t>(b)] = fit_mean_shift(rep, p, shifted, policy, ml).T;
    } catch (...) {
      // leave NaN, counted as a failed replicate
    }
  };
  if (config.parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int b = 0; b < B; ++b) one(b);
  } else {
    for (int b = 0; b < B; ++b) one(b);
  }

  lrt_bootstrap_result result;
  result.requested = B;
  for (int b = 0; b < B; ++b) {
    if (std::isnan(draws[static_cast<size_t>(b)])) ++result.failed;
    else result.T.samples.push_back(draws[static_cast<size_t>(b)]);
  }
  if (result.failed > failure_ceiling(config))
    throw bootstrap_error("bootstrap failure rate exceeded for trial '" + target.label +
                          "': " + std::to_string(result.failed) + " of " +
                          std::to_string(B) + " replicates failed");
  attach_percentiles(result.T, config.percentiles);
  result.p95 = percentile(result.T.samples, 0.95);
  result.p_value = bootstrap_p_value(result.T.samples, observed.T);
  return result;
}

}  // namespace nmadiag
