#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nmadiag/bootstrap.hpp"
#include "nmadiag/diagnostics.hpp"
#include "nmadiag/ingest.hpp"
#include "nmadiag/model.hpp"

namespace nmadiag {

struct run_config {
  std::string input_path;
  std::string reference_label = "Placebo";
  fit_method method = fit_method::reml;
  int bootstrap_replicates = 2400;
  std::uint64_t seed = 1729;
  std::vector<std::string> exclude;  // trial labels or numeric ids
  std::string out_dir = ".";
  bool write_tsv = true;
  bool write_json = true;
  bool parallel = true;
  pipeline_options pipeline;
  rebase_policy policy = rebase_policy::first_arm;
  fit_options fit;
};

struct league_table {
  std::vector<int> order;           // treatment ids ranked by OR vs reference, ascending
  std::vector<std::string> labels;  // aligned with order
  Eigen::MatrixXd odds_ratio;       // cell(r,c) = OR of order[r] vs order[c]
  Eigen::MatrixXd ci_lo, ci_hi;     // Wald: exp(contrast +- 1.96 se)
  double tau = 0.0;
  int n_trials = 0;
  double participants = 0.0;
};

league_table build_league_table(const model_fit& fit, const treatment_index& treatments,
                                int n_trials, double participants);

struct forest_entry {
  int treatment = 0;
  std::string label;
  double odds_ratio = 0.0, lo = 0.0, hi = 0.0;
};

std::vector<forest_entry> forest_data(const league_table& league, const treatment_index& treatments);

struct flag_row {
  int trial_id = 0;
  std::string study;
  bool psi = false, covratio = false, psiratio = false, lrt = false;
  bool any = false, all = false;
};

struct sensitivity_result {
  std::vector<std::string> excluded;  // resolved trial labels
  model_fit fit_before, fit_after;
  league_table before, after;
};

struct analysis_report {
  treatment_index treatments;
  int n_trials = 0;
  double participants = 0.0;
  model_fit summary_fit;  // method chosen by config (drives the league table)
  model_fit reml_fit;     // baseline for the residual/COVRATIO/PSIRATIO sections
  league_table league;
  std::vector<residual_record> residuals;  // by |psi| descending
  std::vector<influence_record> influence; // by COVRATIO ascending
  std::vector<lrt_record> lrt;             // by bootstrap p (chi-square p when B = 0)
  std::vector<flag_row> flags;             // by trial id
  std::optional<sensitivity_result> sensitivity;
  int bootstrap_replicates = 0;
  std::uint64_t seed = 0;
  int bootstrap_failures = 0;  // loo-sweep replicate failures
};

analysis_report run_analysis(const run_config& config);

sensitivity_result sensitivity_analysis(const parsed_data& parsed,
                                        const std::vector<int>& excluded_ids,
                                        const run_config& config);

// Emitters; all files derive from the one report object.
std::string summary_tsv(const analysis_report& r);
std::string league_tsv(const analysis_report& r);
std::string forest_tsv(const analysis_report& r);
std::string residuals_tsv(const analysis_report& r);
std::string influence_tsv(const analysis_report& r);
std::string lrt_tsv(const analysis_report& r);
std::string flags_tsv(const analysis_report& r);
std::string sensitivity_tsv(const analysis_report& r);
std::string report_json(const analysis_report& r);

// Writes the selected formats into config.out_dir; returns written paths.
std::vector<std::string> write_reports(const analysis_report& r, const run_config& config);

}  // namespace nmadiag
