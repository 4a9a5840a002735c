#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nmadiag/report.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Network meta-analysis outlier and influence diagnostics"};

  nmadiag::run_config config;
  std::string method = "reml";
  std::string format = "tsv,json";

  app.add_option("--input", config.input_path, "arm-level trial data (csv or tsv)")
      ->required();
  app.add_option("--reference", config.reference_label,
                 "reference treatment label (default Placebo)");
  app.add_option("--method", method, "summary estimation: reml or ml")
      ->check(CLI::IsMember({"reml", "ml"}));
  app.add_option("--bootstrap", config.bootstrap_replicates,
                 "parametric bootstrap replicates (0 disables calibration)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", config.seed, "bootstrap seed");
  app.add_option("--exclude", config.exclude,
                 "trials (label or id) removed in a sensitivity refit")
      ->delimiter(',');
  app.add_option("--out", config.out_dir, "output directory");
  app.add_option("--format", format, "comma-separated output formats: tsv,json");
  app.add_flag("--serial", "run single-threaded");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  config.method = method == "ml" ? nmadiag::fit_method::ml : nmadiag::fit_method::reml;
  if (app.count("--serial") > 0) config.parallel = false;

  config.write_tsv = false;
  config.write_json = false;
  std::stringstream fmts(format);
  std::string token;
  while (std::getline(fmts, token, ',')) {
    if (token == "tsv")
      config.write_tsv = true;
    else if (token == "json")
      config.write_json = true;
    else if (!token.empty())
      throw nmadiag::config_error("unknown format '" + token + "' (expected tsv or json)");
  }
  if (!config.write_tsv && !config.write_json)
    throw nmadiag::config_error("--format selects no output");

  const nmadiag::analysis_report report = nmadiag::run_analysis(config);
  const auto written = nmadiag::write_reports(report, config);

  std::printf("trials: %d  treatments: %d  participants: %.0f\n", report.n_trials,
              report.treatments.size(), report.participants);
  std::printf("%s tau = %.4f (tau2 = %.6f)\n",
              report.summary_fit.method == nmadiag::fit_method::reml ? "REML" : "ML",
              std::sqrt(report.summary_fit.tau2), report.summary_fit.tau2);
  int flagged = 0;
  for (const auto& row : report.flags)
    if (row.any) ++flagged;
  if (report.bootstrap_replicates > 0)
    std::printf("bootstrap: B = %d, seed = %llu, flagged trials: %d\n",
                report.bootstrap_replicates,
                static_cast<unsigned long long>(report.seed), flagged);
  else
    std::printf("bootstrap disabled; asymptotic flags only: %d\n", flagged);
  for (const auto& path : written) std::printf("wrote %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const nmadiag::ingest_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const nmadiag::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
