#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "nmadiag/ingest.hpp"
#include "nmadiag/model.hpp"
#include "oracles.hpp"

using namespace nmadiag;

namespace {

std::vector<contrast_data> shipped_contrasts(int* p_out = nullptr) {
  auto parsed = parse_trials_file(NMADIAG_DATA_CSV);
  if (p_out) *p_out = parsed.treatments.p();
  return build_contrast_dataset(parsed.trials, {});
}

}  // namespace

TEST_CASE("multivariate fitter reduces to the univariate oracle") {
  const auto obs = oracle::uni_example();
  const auto data = oracle::uni_contrasts(obs);

  for (bool reml : {true, false}) {
    fit_options opts;
    opts.method = reml ? fit_method::reml : fit_method::ml;
    const auto fit = fit_model(data, 1, opts);
    const auto ref = oracle::uni_fit(obs, reml);
    CHECK(fit.converged);
    CHECK(fit.tau2 == doctest::Approx(ref.tau2).epsilon(1e-6));
    CHECK(fit.mu(0) == doctest::Approx(ref.mu).epsilon(1e-6));
    CHECK(fit.mu_cov(0, 0) == doctest::Approx(ref.mu_var).epsilon(1e-6));
    CHECK(fit.loglik == doctest::Approx(ref.objective).epsilon(1e-8));
  }
}

TEST_CASE("profiled mean satisfies the GLS stationarity condition") {
  int p = 0;
  const auto data = shipped_contrasts(&p);
  for (auto method : {fit_method::reml, fit_method::ml}) {
    fit_options opts;
    opts.method = method;
    const auto fit = fit_model(data, p, opts);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
    for (const auto& cd : data) {
      const auto W = marginal_precision(cd, fit.tau2);
      const auto X = cd.design(p);
      grad += X.transpose() * W * (cd.y - X * fit.mu);
    }
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("restricted objective equals profile loglik minus half logdet information") {
  int p = 0;
  const auto data = shipped_contrasts(&p);
  const auto view = make_view(data);
  for (double tau2 : {0.0, 0.003, 0.00975, 0.08}) {
    Eigen::VectorXd mu;
    Eigen::MatrixXd cov;
    profile_mu(view, p, tau2, mu, &cov);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    for (const auto* cd : view) {
      const auto X = cd->design(p);
      info += X.transpose() * marginal_precision(*cd, tau2) * X;
    }
    const double direct =
        log_likelihood(view, p, mu, tau2) - 0.5 * std::log(info.determinant());
    CHECK(restricted_log_likelihood(view, p, tau2) ==
          doctest::Approx(direct).epsilon(1e-9));
  }
}

TEST_CASE("case-study REML fit reproduces the frozen heterogeneity estimate") {
  int p = 0;
  const auto data = shipped_contrasts(&p);
  const auto fit = fit_model(data, p, {});
  CHECK(fit.converged);
  CHECK_FALSE(fit.at_upper_bound);
  CHECK(fit.n_trials == 26);
  CHECK(fit.tau2 == doctest::Approx(0.00975007).epsilon(1e-4));
  CHECK(std::sqrt(fit.tau2) == doctest::Approx(0.0987425).epsilon(1e-4));

  // the maximizer is a local maximum of the restricted objective
  const auto view = make_view(data);
  const double at = restricted_log_likelihood(view, p, fit.tau2);
  CHECK(at >= restricted_log_likelihood(view, p, fit.tau2 + 1e-4));
  CHECK(at >= restricted_log_likelihood(view, p, std::max(0.0, fit.tau2 - 1e-4)));
  CHECK(at == doctest::Approx(fit.loglik).epsilon(1e-10));
}

TEST_CASE("fit is invariant under permuting the trial order") {
  int p = 0;
  auto data = shipped_contrasts(&p);
  const auto base = fit_model(data, p, {});
  std::mt19937 rng(7);
  std::shuffle(data.begin(), data.end(), rng);
  const auto shuffled = fit_model(data, p, {});
  // summation order perturbs the objective in the last ulps, so agreement is
  // bounded by the optimizer tolerance rather than machine epsilon
  CHECK(std::abs(shuffled.tau2 - base.tau2) < 1e-8);
  CHECK(std::abs(shuffled.loglik - base.loglik) < 1e-7);
  for (int j = 0; j < p; ++j) CHECK(std::abs(shuffled.mu(j) - base.mu(j)) < 1e-7);
}

TEST_CASE("boundary estimates are returned exactly") {
  // homogeneous data: identical effects, tau2 lands exactly on 0
  std::vector<oracle::uni_obs> homog(6, {-0.30, 0.05});
  const auto data = oracle::uni_contrasts(homog);
  const auto fit = fit_model(data, 1, {});
  CHECK(fit.tau2 == 0.0);
  CHECK_FALSE(fit.at_upper_bound);
  CHECK(fit.mu(0) == doctest::Approx(-0.30).epsilon(1e-12));

  // wildly heterogeneous data pushes the estimate onto the upper bound
  std::vector<oracle::uni_obs> wild = {{-8.0, 1e-4}, {8.0, 1e-4}, {-7.5, 1e-4},
                                       {7.5, 1e-4}};
  const auto fit2 = fit_model(oracle::uni_contrasts(wild), 1, {});
  CHECK(fit2.at_upper_bound);
  CHECK(fit2.tau2 == doctest::Approx(10.0));
}

TEST_CASE("degenerate inputs raise model errors") {
  int p = 0;
  const auto data = shipped_contrasts(&p);

  std::vector<contrast_data> one = {data.front()};
  CHECK_THROWS_AS(fit_model(one, p, {}), model_error);

  // dropping the only AB trial leaves a singular information matrix
  std::vector<contrast_data> no_ab;
  for (const auto& cd : data)
    if (cd.label != "ALLHAT") no_ab.push_back(cd);
  CHECK_THROWS_AS(fit_model(no_ab, p, {}), model_error);
}

TEST_CASE("rebase policies pick the intended temporary reference") {
  int p = 0;
  const auto data = shipped_contrasts(&p);
  for (const auto& cd : data) {
    const int first = rebase_reference_arm(cd, rebase_policy::first_arm);
    CHECK(first == cd.arm_treatments.front());
    const int lowest = rebase_reference_arm(cd, rebase_policy::lowest_index);
    CHECK(lowest == *std::min_element(cd.arm_treatments.begin(),
                                      cd.arm_treatments.end()));
  }
}

TEST_CASE("mean-shift test statistic reduces to the univariate oracle") {
  const auto obs = oracle::uni_example();
  const auto data = oracle::uni_contrasts(obs);

  auto oracle_T = [&](size_t i) {
    std::vector<oracle::uni_obs> others;
    for (size_t k = 0; k < obs.size(); ++k)
      if (k != i) others.push_back(obs[k]);
    const double l0 = oracle::uni_fit(obs, false).objective;
    // shift profile: ML of the others plus the left-out block's logdet term
    auto l1 = [&](double tau2) {
      return oracle::uni_objective(others, tau2, false) -
             0.5 * (std::log(tau2 + obs[i].v) + std::log(8.0 * std::atan(1.0)));
    };
    double best = -1e300;
    for (int g = 0; g <= 200000; ++g) {
      const double f = l1(10.0 * g / 200000);
      if (f > best) best = f;
    }
    return std::max(0.0, -2.0 * (l0 - best));
  };

  for (size_t i : {size_t{0}, size_t{2}, size_t{5}}) {
    const auto shift = fit_mean_shift(data, 1, static_cast<int>(i));
    CHECK(shift.converged);
    CHECK(shift.df == 1);
    CHECK(shift.T == doctest::Approx(oracle_T(i)).epsilon(5e-5));
  }
}

TEST_CASE("mean-shift fits on the case study behave structurally") {
  int p = 0;
  const auto data = shipped_contrasts(&p);
  for (size_t i = 0; i < data.size(); ++i) {
    if (data[i].label == "ALLHAT") continue;  // leave-one-out unidentifiable
    const auto shift = fit_mean_shift(data, p, static_cast<int>(i));
    CHECK(shift.T >= 0.0);
    CHECK(shift.df == data[i].informative());
    CHECK(shift.eta.size() == shift.df);
    CHECK(shift.loglik >= shift.null_loglik - 1e-9);
    if (data[i].label == "TRANSCEND")
      CHECK(shift.T == doctest::Approx(6.81528).epsilon(1e-4));
    if (data[i].label == "STOP-2") CHECK(shift.df == 2);
  }
}

TEST_CASE("leave-one-out views skip exactly one block") {
  int p = 0;
  const auto data = shipped_contrasts(&p);
  const auto v = make_view_excluding(data, 3);
  CHECK(v.size() == data.size() - 1);
  for (const auto* cd : v) CHECK(cd != &data[3]);
}
