#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nmadiag/types.hpp"

namespace nmadiag {

struct format_config {
  // '\0' selects by sniffing the header line (tab if present, comma otherwise)
  char delimiter = '\0';
  std::string reference_label = "Placebo";
  // when set, treatment labels outside this list are rejected; otherwise
  // labels are auto-registered (reference first, others alphabetical)
  std::optional<std::vector<std::string>> treatments;
};

struct parsed_data {
  treatment_index treatments;
  std::vector<trial> trials;  // input order, ids 1..N
};

parsed_data parse_trials(std::istream& source, const format_config& config = {});
parsed_data parse_trials_file(const std::string& path, const format_config& config = {});

struct network_edge {
  int a = 0;
  int b = 0;
  int trials = 0;
};

struct network_summary {
  int nodes = 0;
  std::vector<network_edge> edges;
  std::vector<std::vector<int>> components;  // singleton when connected
  bool connected() const { return components.size() == 1; }
};

// Builds the comparison graph over all treatments seen in `trials` plus every
// id in [0, n_treatments); throws ingest_error listing the components when the
// graph is disconnected.
network_summary validate_network(const std::vector<trial>& trials, int n_treatments);

// Non-throwing graph summary used for leave-one-out computability checks.
network_summary summarize_network(const std::vector<trial>& trials, int n_treatments);

// Haldane-Anscombe style correction: a trial containing a zero or full cell
// has `increment` added to every arm's events and 2*increment to its size.
// Pseudo-arms are never touched.
trial apply_continuity_correction(const trial& t, double increment = 0.5);

// Appends the pseudo reference arm (d0 events of n0) to trials lacking the
// global reference; trials already containing it pass through unchanged.
trial augment_reference(const trial& t, double d0 = 0.001, double n0 = 0.01);

// Wei-Higgins contrasts of every non-reference arm against `reference`:
//   y_j  = log[(d_j/(n_j-d_j)) / (d_r/(n_r-d_r))]
//   s_jj = 1/d_j + 1/(n_j-d_j) + 1/d_r + 1/(n_r-d_r)
//   s_jk = 1/d_r + 1/(n_r-d_r)
contrast_data compute_contrasts(const trial& t, int reference = reference_id);

// Head-to-head contrasts against new_reference (which must be a real arm of
// the trial); the augmented pseudo-arm is dropped, leaving q_i components.
contrast_data rebase_contrasts(const trial& t, int new_reference);

struct pipeline_options {
  double correction_increment = 0.5;
  double augment_events = 0.001;
  double augment_size = 0.01;
};

// correction -> augmentation -> contrasts for every trial.
std::vector<contrast_data> build_contrast_dataset(const std::vector<trial>& trials,
                                                  const pipeline_options& opts = {});

// Linear re-basing of an existing contrast block: y' = C y, S' = C S C^T with
// C the contrast map onto (arm vs new_reference) rows. Agrees exactly with
// rebase_contrasts on cell-level data and is the only route available for
// resampled y vectors.
struct rebase_map {
  std::vector<comparison> comps;
  Eigen::MatrixXd C;
};

rebase_map make_rebase_map(const contrast_data& cd, int new_reference);
contrast_data apply_rebase(const contrast_data& cd, const rebase_map& map);

}  // namespace nmadiag
