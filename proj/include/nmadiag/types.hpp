#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmadiag {

// Error taxonomy, mapped to CLI exit codes: ingest/config -> 2, numerical -> 3.
struct ingest_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct model_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct bootstrap_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Canonical treatment coding: id 0 is the global reference, ids 1..p the rest.
inline constexpr int reference_id = 0;

struct treatment_index {
  std::vector<std::string> labels;  // position = canonical id

  int p() const { return static_cast<int>(labels.size()) - 1; }
  int size() const { return static_cast<int>(labels.size()); }

  // -1 when the label is not registered
  int id_of(const std::string& label) const {
    for (int i = 0; i < size(); ++i)
      if (labels[i] == label) return i;
    return -1;
  }
  const std::string& label_of(int id) const { return labels.at(static_cast<size_t>(id)); }
};

struct trial_arm {
  int treatment = 0;
  double events = 0.0;  // d, real-valued so pseudo-arms (0.001/0.01) are representable
  double size = 0.0;    // n
  bool pseudo = false;  // augmentation artifact, exempt from continuity correction
};

struct trial {
  int id = 0;
  std::string label;
  int year = 0;
  std::vector<trial_arm> arms;  // input order preserved
  bool corrected = false;
  bool augmented = false;

  bool has_treatment(int t) const {
    for (const auto& a : arms)
      if (a.treatment == t) return true;
    return false;
  }
};

// Directed contrast: log odds(a) - log odds(b).
struct comparison {
  int a = 0;
  int b = 0;
};

// Per-trial contrast block restricted to the observed components. Row j of y
// estimates the contrast comps[j]; S is the within-study covariance of y.
struct contrast_data {
  int trial_id = 0;
  std::string label;
  std::vector<comparison> comps;
  Eigen::VectorXd y;
  Eigen::MatrixXd S;
  std::vector<int> arm_treatments;  // real arms in input order, pseudo-arm excluded
  bool augmented = false;

  int rows() const { return static_cast<int>(y.size()); }        // p_i
  int informative() const {                                      // q_i
    return static_cast<int>(arm_treatments.size()) - 1;
  }

  // Design rows e_a - e_b on the p non-reference coordinates (e_0 = 0).
  Eigen::MatrixXd design(int p) const {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows(), p);
    for (int j = 0; j < rows(); ++j) {
      if (comps[j].a > 0) X(j, comps[j].a - 1) += 1.0;
      if (comps[j].b > 0) X(j, comps[j].b - 1) -= 1.0;
    }
    return X;
  }
};

// Heterogeneity structure tau^2 * P with unit diagonal and 0.5 off-diagonal,
// the equal-variance form implied by the consistency assumption. The same
// structure holds after re-basing to any common comparator arm.
inline Eigen::MatrixXd heterogeneity_structure(int dim) {
  return 0.5 * (Eigen::MatrixXd::Identity(dim, dim) + Eigen::MatrixXd::Ones(dim, dim));
}

}  // namespace nmadiag
