#include "nmadiag/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nmadiag/ingest.hpp"
#include "nmadiag/stats.hpp"

namespace nmadiag {

namespace {

constexpr double log_2pi = 1.8378770664093454836;

// tau2 * P + S with P = 0.5 (I + J)
Eigen::MatrixXd marginal_cov(const contrast_data& cd, double tau2) {
  Eigen::MatrixXd M = cd.S;
  M.array() += 0.5 * tau2;
  M.diagonal().array() += 0.5 * tau2;
  return M;
}

// Profiled GLS evaluation with per-instance scratch so the optimizer loop
// stays allocation-free.
class gls_engine {
 public:
  gls_engine(const dataset_view& data, int p) : data_(data), p_(p) {
    X_.reserve(data.size());
    M_.resize(data.size());
    llt_.resize(data.size());
    WX_.resize(data.size());
    r_.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
      X_.push_back(data[i]->design(p));
      const int n = data[i]->rows();
      M_[i].resize(n, n);
      WX_[i].resize(n, p);
      r_[i].resize(n);
    }
    A_.resize(p, p);
    b_.resize(p);
    mu_.resize(p);
  }

  struct result {
    double loglik = 0.0;   // ML value at the profiled mu
    double logdet_A = 0.0;
  };

  result evaluate(double tau2) {
    A_.setZero();
    b_.setZero();
    double logdet_M = 0.0;
    double n_terms = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) {
      M_[i] = marginal_cov(*data_[i], tau2);
      llt_[i].compute(M_[i]);
      if (llt_[i].info() != Eigen::Success)
        throw model_error("marginal covariance not positive definite for trial '" +
                          data_[i]->label + "'");
      const auto& L = llt_[i].matrixL();
      for (int j = 0; j < M_[i].rows(); ++j) logdet_M += 2.0 * std::log(L(j, j));
      n_terms += static_cast<double>(M_[i].rows());
      WX_[i].noalias() = llt_[i].solve(X_[i]);
      A_.noalias() += X_[i].transpose() * WX_[i];
      b_.noalias() += WX_[i].transpose() * data_[i]->y;
    }
    A_llt_.compute(A_);
    if (A_llt_.info() != Eigen::Success)
      throw model_error("singular information matrix; is the network connected?");
    mu_ = A_llt_.solve(b_);

    double quad = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) {
      r_[i] = data_[i]->y - X_[i] * mu_;
      quad += r_[i].dot(llt_[i].solve(r_[i]));
    }
    result out;
    out.loglik = -0.5 * (logdet_M + quad + n_terms * log_2pi);
    const auto& LA = A_llt_.matrixL();
    for (int j = 0; j < p_; ++j) out.logdet_A += 2.0 * std::log(LA(j, j));
    return out;
  }

  const Eigen::VectorXd& mu() const { return mu_; }
  Eigen::MatrixXd mu_cov() const {
    return A_llt_.solve(Eigen::MatrixXd::Identity(p_, p_));
  }

 private:
  dataset_view data_;
  int p_;
  std::vector<Eigen::MatrixXd> X_, M_, WX_;
  std::vector<Eigen::VectorXd> r_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt_;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_, mu_;
  Eigen::LLT<Eigen::MatrixXd> A_llt_;
};

double objective(gls_engine& eng, fit_method method, double tau2) {
  const auto ev = eng.evaluate(tau2);
  return method == fit_method::reml ? ev.loglik - 0.5 * ev.logdet_A : ev.loglik;
}

}  // namespace

dataset_view make_view(const std::vector<contrast_data>& data) {
  dataset_view v;
  v.reserve(data.size());
  for (const auto& cd : data) v.push_back(&cd);
  return v;
}

dataset_view make_view_excluding(const std::vector<contrast_data>& data, int skip_index) {
  dataset_view v;
  v.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i)
    if (static_cast<int>(i) != skip_index) v.push_back(&data[i]);
  return v;
}

Eigen::MatrixXd marginal_precision(const contrast_data& cd, double tau2) {
  if (tau2 < 0.0) throw model_error("tau2 must be nonnegative");
  Eigen::LLT<Eigen::MatrixXd> llt(marginal_cov(cd, tau2));
  if (llt.info() != Eigen::Success)
    throw model_error("marginal covariance not positive definite for trial '" + cd.label +
                      "'");
  return llt.solve(Eigen::MatrixXd::Identity(cd.rows(), cd.rows()));
}

void profile_mu(const dataset_view& data, int p, double tau2, Eigen::VectorXd& mu,
                Eigen::MatrixXd* mu_cov) {
  gls_engine eng(data, p);
  eng.evaluate(tau2);
  mu = eng.mu();
  if (mu_cov) *mu_cov = eng.mu_cov();
}

double log_likelihood(const dataset_view& data, int p, const Eigen::VectorXd& mu,
                      double tau2) {
  double ll = 0.0;
  for (const auto* cd : data) {
    Eigen::LLT<Eigen::MatrixXd> llt(marginal_cov(*cd, tau2));
    if (llt.info() != Eigen::Success)
      throw model_error("marginal covariance not positive definite for trial '" +
                        cd->label + "'");
    const Eigen::VectorXd r = cd->y - cd->design(p) * mu;
    double logdet = 0.0;
    const auto& L = llt.matrixL();
    for (int j = 0; j < cd->rows(); ++j) logdet += 2.0 * std::log(L(j, j));
    ll -= 0.5 * (logdet + r.dot(llt.solve(r)) + cd->rows() * log_2pi);
  }
  return ll;
}

double restricted_log_likelihood(const dataset_view& data, int p, double tau2) {
  gls_engine eng(data, p);
  const auto ev = eng.evaluate(tau2);
  return ev.loglik - 0.5 * ev.logdet_A;
}

model_fit fit_model(const dataset_view& data, int p, const fit_options& opts) {
  if (data.size() < 2) throw model_error("fit_model needs at least two trials");
  if (p < 1) throw model_error("fit_model needs at least one non-reference treatment");

  gls_engine eng(data, p);
  const auto res = brent_maximize([&](double t2) { return objective(eng, opts.method, t2); },
                                  0.0, opts.tau2_max, opts.tol, opts.max_iter);
  if (!res.converged) {
    std::ostringstream msg;
    msg << "optimizer did not converge in " << opts.max_iter
        << " iterations; best tau2 = " << res.x << ", objective = " << res.fx;
    throw model_error(msg.str());
  }

  model_fit fit;
  fit.method = opts.method;
  fit.tau2 = res.x;
  fit.loglik = objective(eng, opts.method, res.x);  // also refreshes engine state
  fit.mu = eng.mu();
  fit.mu_cov = eng.mu_cov();
  fit.converged = true;
  fit.iterations = res.iterations;
  fit.at_upper_bound = res.x >= opts.tau2_max * (1.0 - 1e-9);
  fit.n_trials = static_cast<int>(data.size());
  return fit;
}

model_fit fit_model(const std::vector<contrast_data>& data, int p, const fit_options& opts) {
  return fit_model(make_view(data), p, opts);
}

int rebase_reference_arm(const contrast_data& cd, rebase_policy policy) {
  if (cd.arm_treatments.empty()) throw model_error("contrast block has no real arms");
  if (policy == rebase_policy::first_arm) return cd.arm_treatments.front();
  return *std::min_element(cd.arm_treatments.begin(), cd.arm_treatments.end());
}

mean_shift_fit fit_mean_shift(const std::vector<contrast_data>& data, int p, int trial_index,
                              rebase_policy policy, const fit_options& opts) {
  if (trial_index < 0 || trial_index >= static_cast<int>(data.size()))
    throw model_error("fit_mean_shift: trial index out of range");
  const contrast_data& target = data[static_cast<size_t>(trial_index)];
  const rebase_map map = make_rebase_map(target, rebase_reference_arm(target, policy));
  const contrast_data reb = apply_rebase(target, map);

  dataset_view others = make_view_excluding(data, trial_index);
  dataset_view with_target = others;
  with_target.push_back(&reb);

  fit_options ml = opts;
  ml.method = fit_method::ml;
  const model_fit null_fit = fit_model(with_target, p, ml);

  // Shifted model: eta absorbs the target trial's residual, so only its
  // log-det survives; the rest is the ML profile over the other trials.
  gls_engine eng(others, p);
  const int q = reb.rows();
  const Eigen::MatrixXd Xr = reb.design(p);
  auto shift_obj = [&](double tau2) {
    const auto ev = eng.evaluate(tau2);
    Eigen::LLT<Eigen::MatrixXd> llt(marginal_cov(reb, tau2));
    if (llt.info() != Eigen::Success)
      throw model_error("marginal covariance not positive definite for trial '" +
                        reb.label + "'");
    double logdet = 0.0;
    const auto& L = llt.matrixL();
    for (int j = 0; j < q; ++j) logdet += 2.0 * std::log(L(j, j));
    return ev.loglik - 0.5 * (logdet + q * log_2pi);
  };
  const auto res = brent_maximize(shift_obj, 0.0, opts.tau2_max, opts.tol, opts.max_iter);
  if (!res.converged)
    throw model_error("mean-shift fit for trial '" + target.label + "' did not converge");

  mean_shift_fit out;
  out.shifted_trial = target.trial_id;
  out.comps = reb.comps;
  out.tau2 = res.x;
  out.loglik = shift_obj(res.x);
  out.mu = eng.mu();
  out.eta = reb.y - Xr * out.mu;
  out.null_loglik = null_fit.loglik;
  out.df = q;
  out.converged = true;
  const double T = -2.0 * (out.null_loglik - out.loglik);
  if (T < -1e-6)
    throw model_error("mean-shift likelihood below the null for trial '" + target.label +
                      "'; optimizer failure");
  out.T = std::max(T, 0.0);
  return out;
}

}  // namespace nmadiag
