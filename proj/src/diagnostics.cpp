#include "nmadiag/diagnostics.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

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

double logdet_pd(const Eigen::MatrixXd& M, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw model_error(std::string(what) + ": matrix not positive definite");
  double logdet = 0.0;
  const auto& L = llt.matrixL();
  for (int j = 0; j < M.rows(); ++j) logdet += 2.0 * std::log(L(j, j));
  return logdet;
}

}  // namespace

Eigen::VectorXd multivariate_residual(const contrast_data& cd, const model_fit& fit, int p) {
  const Eigen::MatrixXd X = cd.design(p);
  const Eigen::VectorXd r = cd.y - X * fit.mu;
  const Eigen::MatrixXd V = marginal_cov(cd, fit.tau2) - X * fit.mu_cov * X.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw model_error("residual covariance for trial '" + cd.label +
                      "' is not positive definite");
  const Eigen::VectorXd inv_sqrt = es.eigenvalues().array().rsqrt();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * r;
}

model_fit loo_fit(const std::vector<contrast_data>& data, int p, int leave_out,
                  const fit_options& opts) {
  return fit_model(make_view_excluding(data, leave_out), p, opts);
}

std::vector<residual_record> studentized_residuals(const std::vector<contrast_data>& data,
                                                   int p, int trial_index,
                                                   const model_fit& full,
                                                   const model_fit* loo,
                                                   rebase_policy policy) {
  const contrast_data& cd = data[static_cast<size_t>(trial_index)];
  const rebase_map map = make_rebase_map(cd, rebase_reference_arm(cd, policy));
  const contrast_data reb = apply_rebase(cd, map);
  const Eigen::MatrixXd Xr = reb.design(p);

  // phi: consensus includes the trial, variance shrinks by the estimation term;
  // psi: consensus excludes it, variance grows by the prediction term.
  const Eigen::MatrixXd C = map.C;
  const Eigen::VectorXd phi_num = reb.y - Xr * full.mu;
  const Eigen::MatrixXd phi_var =
      C * marginal_cov(cd, full.tau2) * C.transpose() - Xr * full.mu_cov * Xr.transpose();

  Eigen::VectorXd psi_num;
  Eigen::MatrixXd psi_var;
  if (loo) {
    psi_num = reb.y - Xr * loo->mu;
    psi_var =
        C * marginal_cov(cd, loo->tau2) * C.transpose() + Xr * loo->mu_cov * Xr.transpose();
  }

  std::vector<residual_record> records;
  for (int j = 0; j < reb.rows(); ++j) {
    residual_record rec;
    rec.trial_id = cd.trial_id;
    rec.study = cd.label;
    rec.comp = reb.comps[static_cast<size_t>(j)];
    rec.phi = phi_num(j) / std::sqrt(phi_var(j, j));
    if (loo) {
      rec.psi = psi_num(j) / std::sqrt(psi_var(j, j));
      rec.flagged = std::abs(rec.psi) > 1.96;
    } else {
      rec.psi = quiet_nan;
      rec.computable = false;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

double covratio(const model_fit& full, const model_fit& loo) {
  const double ld_loo = logdet_pd(loo.mu_cov, "covratio leave-one-out covariance");
  const double ld_full = logdet_pd(full.mu_cov, "covratio full covariance");
  return std::exp(ld_loo - ld_full);
}

std::optional<double> psiratio(const model_fit& full, const model_fit& loo, int p) {
  if (full.tau2 <= 0.0) return std::nullopt;  // det(Psi) = 0, ratio undefined
  return std::pow(loo.tau2 / full.tau2, p);
}

bool loo_identifiable(const std::vector<contrast_data>& data, int p, int leave_out) {
  // union-find over treatments 0..p on the remaining comparison edges
  std::vector<int> parent(static_cast<size_t>(p) + 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] =
          parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };
  std::vector<bool> seen(static_cast<size_t>(p) + 1, false);
  seen[0] = true;
  for (size_t i = 0; i < data.size(); ++i) {
    if (static_cast<int>(i) == leave_out) continue;
    for (const auto& c : data[i].comps) {
      seen[static_cast<size_t>(c.a)] = true;
      seen[static_cast<size_t>(c.b)] = true;
      parent[static_cast<size_t>(find(c.a))] = find(c.b);
    }
  }
  for (int t = 0; t <= p; ++t)
    if (!seen[static_cast<size_t>(t)] || find(t) != find(0)) return false;
  return true;
}

loo_sweep run_loo_diagnostics(const std::vector<contrast_data>& data, int p,
                              const fit_options& opts, rebase_policy policy, bool parallel) {
  const int n = static_cast<int>(data.size());
  loo_sweep sweep;
  sweep.full = fit_model(data, p, opts);
  sweep.fits.resize(static_cast<size_t>(n));

  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  auto one = [&](int i) {
    try {
      if (loo_identifiable(data, p, i))
        sweep.fits[static_cast<size_t>(i)] = loo_fit(data, p, i, opts);
    } catch (...) {
      errors[static_cast<size_t>(i)] = std::current_exception();
    }
  };

  if (parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < n; ++i) one(i);
  } else {
    for (int i = 0; i < n; ++i) one(i);
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  for (int i = 0; i < n; ++i) {
    const auto& fit_i = sweep.fits[static_cast<size_t>(i)];
    auto recs = studentized_residuals(data, p, i, sweep.full,
                                      fit_i ? &*fit_i : nullptr, policy);
    sweep.residuals.insert(sweep.residuals.end(), recs.begin(), recs.end());

    influence_record inf;
    inf.trial_id = data[static_cast<size_t>(i)].trial_id;
    inf.study = data[static_cast<size_t>(i)].label;
    if (fit_i) {
      inf.covratio = covratio(sweep.full, *fit_i);
      inf.psiratio = psiratio(sweep.full, *fit_i, p);
    } else {
      inf.computable = false;
      inf.covratio = quiet_nan;
    }
    sweep.influence.push_back(std::move(inf));
  }
  return sweep;
}

lrt_record lrt_mean_shift(const std::vector<contrast_data>& data, int p, int trial_index,
                          rebase_policy policy, const fit_options& opts) {
  const contrast_data& cd = data[static_cast<size_t>(trial_index)];
  lrt_record rec;
  rec.trial_id = cd.trial_id;
  rec.study = cd.label;
  rec.df = cd.informative();
  if (!loo_identifiable(data, p, trial_index)) {
    rec.computable = false;
    rec.T = quiet_nan;
    rec.chi2_p = quiet_nan;
    return rec;
  }
  const auto shift = fit_mean_shift(data, p, trial_index, policy, opts);
  rec.T = shift.T;
  rec.df = shift.df;
  rec.chi2_p = chi2_upper_tail(shift.T, shift.df);
  rec.flagged = rec.chi2_p < 0.05;
  return rec;
}

std::vector<lrt_record> run_lrt_tests(const std::vector<contrast_data>& data, int p,
                                      rebase_policy policy, const fit_options& opts,
                                      bool parallel) {
  const int n = static_cast<int>(data.size());
  std::vector<lrt_record> records(static_cast<size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  auto one = [&](int i) {
    try {
      records[static_cast<size_t>(i)] = lrt_mean_shift(data, p, i, policy, opts);
    } catch (...) {
      errors[static_cast<size_t>(i)] = std::current_exception();
    }
  };
  if (parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < n; ++i) one(i);
  } else {
    for (int i = 0; i < n; ++i) one(i);
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return records;
}

}  // namespace nmadiag
