#include "nmadiag/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "nmadiag/stats.hpp"

namespace nmadiag {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::string yesno(bool b) { return b ? "yes" : "no"; }

ordered_json json_opt(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return nullptr;
  return *v;
}

ordered_json json_num(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

std::string comp_label(const comparison& c, const treatment_index& t) {
  return t.label_of(c.a) + " vs " + t.label_of(c.b);
}

// mu and V[mu] extended with the reference coordinate (fixed at zero)
double contrast_mu(const model_fit& fit, int a, int b) {
  const double ma = a > 0 ? fit.mu(a - 1) : 0.0;
  const double mb = b > 0 ? fit.mu(b - 1) : 0.0;
  return ma - mb;
}

double contrast_se(const model_fit& fit, int a, int b) {
  double v = 0.0;
  if (a > 0) v += fit.mu_cov(a - 1, a - 1);
  if (b > 0) v += fit.mu_cov(b - 1, b - 1);
  if (a > 0 && b > 0) v -= 2.0 * fit.mu_cov(a - 1, b - 1);
  return std::sqrt(std::max(v, 0.0));
}

constexpr double z975 = 1.959963984540054;

}  // namespace

league_table build_league_table(const model_fit& fit, const treatment_index& treatments,
                                int n_trials, double participants) {
  const int m = treatments.size();
  league_table lt;
  lt.tau = std::sqrt(fit.tau2);
  lt.n_trials = n_trials;
  lt.participants = participants;

  lt.order.resize(static_cast<size_t>(m));
  std::iota(lt.order.begin(), lt.order.end(), 0);
  std::stable_sort(lt.order.begin(), lt.order.end(), [&](int a, int b) {
    return contrast_mu(fit, a, 0) < contrast_mu(fit, b, 0);
  });
  for (int t : lt.order) lt.labels.push_back(treatments.label_of(t));

  lt.odds_ratio.resize(m, m);
  lt.ci_lo.resize(m, m);
  lt.ci_hi.resize(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) {
      const int a = lt.order[static_cast<size_t>(r)], b = lt.order[static_cast<size_t>(c)];
      const double d = contrast_mu(fit, a, b);
      const double se = contrast_se(fit, a, b);
      lt.odds_ratio(r, c) = std::exp(d);
      lt.ci_lo(r, c) = std::exp(d - z975 * se);
      lt.ci_hi(r, c) = std::exp(d + z975 * se);
    }
  return lt;
}

std::vector<forest_entry> forest_data(const league_table& league,
                                      const treatment_index& treatments) {
  std::vector<forest_entry> out;
  // locate the reference's row within the ranked ordering
  int ref_col = 0;
  for (size_t i = 0; i < league.order.size(); ++i)
    if (league.order[i] == reference_id) ref_col = static_cast<int>(i);
  for (size_t r = 0; r < league.order.size(); ++r) {
    if (league.order[r] == reference_id) continue;
    forest_entry e;
    e.treatment = league.order[r];
    e.label = treatments.label_of(e.treatment);
    e.odds_ratio = league.odds_ratio(static_cast<int>(r), ref_col);
    e.lo = league.ci_lo(static_cast<int>(r), ref_col);
    e.hi = league.ci_hi(static_cast<int>(r), ref_col);
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

std::vector<int> resolve_exclusions(const parsed_data& parsed,
                                    const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  for (const auto& token : tokens) {
    const trial* hit = nullptr;
    const bool numeric = !token.empty() &&
                         std::all_of(token.begin(), token.end(),
                                     [](unsigned char c) { return std::isdigit(c); });
    for (const auto& t : parsed.trials) {
      if ((numeric && std::to_string(t.id) == token) || t.label == token) {
        hit = &t;
        break;
      }
    }
    if (!hit) throw config_error("exclusion '" + token + "' names no trial in the input");
    if (std::find(ids.begin(), ids.end(), hit->id) == ids.end()) ids.push_back(hit->id);
  }
  return ids;
}

double count_participants(const std::vector<trial>& trials) {
  double total = 0.0;
  for (const auto& t : trials)
    for (const auto& a : t.arms)
      if (!a.pseudo) total += a.size;
  return total;
}

}  // namespace

sensitivity_result sensitivity_analysis(const parsed_data& parsed,
                                        const std::vector<int>& excluded_ids,
                                        const run_config& config) {
  std::vector<trial> kept;
  sensitivity_result out;
  for (const auto& t : parsed.trials) {
    if (std::find(excluded_ids.begin(), excluded_ids.end(), t.id) != excluded_ids.end())
      out.excluded.push_back(t.label);
    else
      kept.push_back(t);
  }
  if (kept.size() < 2)
    throw config_error("exclusions leave fewer than two trials");
  validate_network(kept, parsed.treatments.size());

  fit_options opts = config.fit;
  opts.method = config.method;

  const auto all_contrasts = build_contrast_dataset(parsed.trials, config.pipeline);
  const auto kept_contrasts = build_contrast_dataset(kept, config.pipeline);
  out.fit_before = fit_model(all_contrasts, parsed.treatments.p(), opts);
  out.fit_after = fit_model(kept_contrasts, parsed.treatments.p(), opts);
  out.before = build_league_table(out.fit_before, parsed.treatments,
                                  static_cast<int>(parsed.trials.size()),
                                  count_participants(parsed.trials));
  out.after = build_league_table(out.fit_after, parsed.treatments,
                                 static_cast<int>(kept.size()), count_participants(kept));
  return out;
}

analysis_report run_analysis(const run_config& config) {
  format_config fmt;
  fmt.reference_label = config.reference_label;
  parsed_data parsed = parse_trials_file(config.input_path, fmt);
  validate_network(parsed.trials, parsed.treatments.size());
  const int p = parsed.treatments.p();
  const auto contrasts = build_contrast_dataset(parsed.trials, config.pipeline);

  analysis_report r;
  r.treatments = parsed.treatments;
  r.n_trials = static_cast<int>(parsed.trials.size());
  r.participants = count_participants(parsed.trials);
  r.bootstrap_replicates = config.bootstrap_replicates;
  r.seed = config.seed;

  fit_options reml_opts = config.fit;
  reml_opts.method = fit_method::reml;
  fit_options ml_opts = config.fit;
  ml_opts.method = fit_method::ml;

  auto sweep = run_loo_diagnostics(contrasts, p, reml_opts, config.policy, config.parallel);
  r.reml_fit = sweep.full;
  r.summary_fit = config.method == fit_method::reml ? sweep.full
                                                    : fit_model(contrasts, p, ml_opts);
  r.league = build_league_table(r.summary_fit, r.treatments, r.n_trials, r.participants);
  r.residuals = std::move(sweep.residuals);
  r.influence = std::move(sweep.influence);
  r.lrt = run_lrt_tests(contrasts, p, config.policy, ml_opts, config.parallel);

  if (config.bootstrap_replicates > 0) {
    bootstrap_config bc;
    bc.replicates = config.bootstrap_replicates;
    bc.seed = config.seed;
    bc.parallel = config.parallel;
    const auto boot =
        bootstrap_loo_sweep(contrasts, p, r.reml_fit, reml_opts, config.policy, bc);
    r.bootstrap_failures = boot.failed;

    for (size_t s = 0; s < r.residuals.size(); ++s) {
      auto& rec = r.residuals[s];
      const auto& dist = boot.psi[s];
      if (!rec.computable || dist.samples.empty()) {
        rec.flagged = false;
        continue;
      }
      rec.boot_lo = dist.percentile_of.at(0.025);
      rec.boot_hi = dist.percentile_of.at(0.975);
      rec.flagged = std::abs(rec.psi) > 1.96 &&
                    (rec.psi < *rec.boot_lo || rec.psi > *rec.boot_hi);
    }
    for (size_t i = 0; i < r.influence.size(); ++i) {
      auto& rec = r.influence[i];
      if (!rec.computable) continue;
      if (!boot.covratio[i].samples.empty()) {
        rec.covratio_p05 = boot.covratio[i].percentile_of.at(0.05);
        rec.covratio_flagged = rec.covratio < *rec.covratio_p05;
      }
      if (rec.psiratio && !boot.psiratio[i].samples.empty()) {
        rec.psiratio_p05 = boot.psiratio[i].percentile_of.at(0.05);
        rec.psiratio_flagged = *rec.psiratio < *rec.psiratio_p05;
      }
    }
    for (size_t i = 0; i < r.lrt.size(); ++i) {
      auto& rec = r.lrt[i];
      if (!rec.computable) continue;
      const auto lb = bootstrap_lrt(contrasts, p, static_cast<int>(i), config.policy, bc,
                                    ml_opts);
      rec.boot_p95 = lb.p95;
      rec.boot_p = lb.p_value;
      rec.flagged = lb.p_value < 0.05;
    }
  }

  // per-trial flag rows, in trial-id order
  for (size_t i = 0; i < r.influence.size(); ++i) {
    flag_row row;
    row.trial_id = r.influence[i].trial_id;
    row.study = r.influence[i].study;
    for (const auto& rec : r.residuals)
      if (rec.trial_id == row.trial_id && rec.computable && rec.flagged) row.psi = true;
    row.covratio = r.influence[i].covratio_flagged;
    row.psiratio = r.influence[i].psiratio_flagged;
    row.lrt = r.lrt[i].computable && r.lrt[i].flagged;
    row.any = row.psi || row.covratio || row.psiratio || row.lrt;
    row.all = row.psi && row.covratio && row.psiratio && row.lrt;
    r.flags.push_back(std::move(row));
  }

  // presentation orderings
  std::stable_sort(r.residuals.begin(), r.residuals.end(),
                   [](const residual_record& a, const residual_record& b) {
                     if (a.computable != b.computable) return a.computable;
                     if (a.computable && std::abs(a.psi) != std::abs(b.psi))
                       return std::abs(a.psi) > std::abs(b.psi);
                     return a.trial_id < b.trial_id;
                   });
  std::stable_sort(r.influence.begin(), r.influence.end(),
                   [](const influence_record& a, const influence_record& b) {
                     if (a.computable != b.computable) return a.computable;
                     if (a.computable && a.covratio != b.covratio)
                       return a.covratio < b.covratio;
                     return a.trial_id < b.trial_id;
                   });
  std::stable_sort(r.lrt.begin(), r.lrt.end(), [](const lrt_record& a, const lrt_record& b) {
    if (a.computable != b.computable) return a.computable;
    const double pa = a.boot_p.value_or(a.chi2_p), pb = b.boot_p.value_or(b.chi2_p);
    if (a.computable && pa != pb) return pa < pb;
    return a.trial_id < b.trial_id;
  });

  if (!config.exclude.empty()) {
    const auto ids = resolve_exclusions(parsed, config.exclude);
    r.sensitivity = sensitivity_analysis(parsed, ids, config);
  }
  return r;
}

std::string summary_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "field\tvalue\n";
  os << "method\t" << (r.summary_fit.method == fit_method::reml ? "reml" : "ml") << "\n";
  os << "reference\t" << r.treatments.label_of(reference_id) << "\n";
  os << "n_trials\t" << r.n_trials << "\n";
  os << "n_treatments\t" << r.treatments.size() << "\n";
  os << "participants\t" << num(r.participants) << "\n";
  os << "tau\t" << num(std::sqrt(r.summary_fit.tau2)) << "\n";
  os << "tau2\t" << num(r.summary_fit.tau2) << "\n";
  os << "loglik\t" << num(r.summary_fit.loglik) << "\n";
  os << "converged\t" << yesno(r.summary_fit.converged) << "\n";
  os << "bootstrap_replicates\t" << r.bootstrap_replicates << "\n";
  os << "seed\t" << r.seed << "\n";
  os << "bootstrap_failures\t" << r.bootstrap_failures << "\n";
  if (r.sensitivity) {
    std::string joined;
    for (const auto& name : r.sensitivity->excluded) {
      if (!joined.empty()) joined += ";";
      joined += name;
    }
    os << "excluded\t" << joined << "\n";
    os << "tau_before\t" << num(r.sensitivity->before.tau) << "\n";
    os << "tau_after\t" << num(r.sensitivity->after.tau) << "\n";
  }
  return os.str();
}

namespace {

void league_rows(std::ostringstream& os, const league_table& lt, const std::string& phase) {
  const int m = static_cast<int>(lt.order.size());
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      if (a == b) continue;
      if (!phase.empty()) os << phase << "\t";
      os << lt.labels[static_cast<size_t>(a)] << "\t" << lt.labels[static_cast<size_t>(b)]
         << "\t" << num(lt.odds_ratio(a, b)) << "\t" << num(lt.ci_lo(a, b)) << "\t"
         << num(lt.ci_hi(a, b)) << "\n";
    }
}

}  // namespace

std::string league_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "treatment_a\ttreatment_b\todds_ratio\tci_lo\tci_hi\n";
  league_rows(os, r.league, "");
  return os.str();
}

std::string forest_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "treatment\todds_ratio\tci_lo\tci_hi\n";
  for (const auto& e : forest_data(r.league, r.treatments))
    os << e.label << "\t" << num(e.odds_ratio) << "\t" << num(e.lo) << "\t" << num(e.hi)
       << "\n";
  return os.str();
}

std::string residuals_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "trial_id\tstudy\tcomparison\tphi\tpsi\tboot_lo_2_5\tboot_hi_97_5\tflagged\t"
        "psi_computable\n";
  for (const auto& rec : r.residuals)
    os << rec.trial_id << "\t" << rec.study << "\t" << comp_label(rec.comp, r.treatments)
       << "\t" << num(rec.phi) << "\t" << num(rec.psi) << "\t" << num(rec.boot_lo) << "\t"
       << num(rec.boot_hi) << "\t" << yesno(rec.flagged) << "\t" << yesno(rec.computable)
       << "\n";
  return os.str();
}

std::string influence_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "trial_id\tstudy\tcovratio\tcovratio_boot_p5\tcovratio_flagged\tpsiratio\t"
        "psiratio_boot_p5\tpsiratio_flagged\tcomputable\n";
  for (const auto& rec : r.influence)
    os << rec.trial_id << "\t" << rec.study << "\t" << num(rec.covratio) << "\t"
       << num(rec.covratio_p05) << "\t" << yesno(rec.covratio_flagged) << "\t"
       << num(rec.psiratio ? *rec.psiratio : std::nan("")) << "\t" << num(rec.psiratio_p05)
       << "\t" << yesno(rec.psiratio_flagged) << "\t" << yesno(rec.computable) << "\n";
  return os.str();
}

std::string lrt_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "trial_id\tstudy\tlrt\tdf\tchi2_p\tboot_p95\tboot_p\tflagged\tcomputable\n";
  for (const auto& rec : r.lrt)
    os << rec.trial_id << "\t" << rec.study << "\t" << num(rec.T) << "\t" << rec.df << "\t"
       << num(rec.chi2_p) << "\t" << num(rec.boot_p95) << "\t" << num(rec.boot_p) << "\t"
       << yesno(rec.flagged) << "\t" << yesno(rec.computable) << "\n";
  return os.str();
}

std::string flags_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "trial_id\tstudy\tpsi\tcovratio\tpsiratio\tlrt\tany\tall\n";
  for (const auto& row : r.flags)
    os << row.trial_id << "\t" << row.study << "\t" << yesno(row.psi) << "\t"
       << yesno(row.covratio) << "\t" << yesno(row.psiratio) << "\t" << yesno(row.lrt)
       << "\t" << yesno(row.any) << "\t" << yesno(row.all) << "\n";
  return os.str();
}

std::string sensitivity_tsv(const analysis_report& r) {
  std::ostringstream os;
  os << "phase\ttreatment_a\ttreatment_b\todds_ratio\tci_lo\tci_hi\n";
  if (r.sensitivity) {
    league_rows(os, r.sensitivity->before, "before");
    league_rows(os, r.sensitivity->after, "after");
  }
  return os.str();
}

namespace {

ordered_json league_json(const league_table& lt) {
  ordered_json j;
  j["tau"] = lt.tau;
  j["n_trials"] = lt.n_trials;
  j["participants"] = lt.participants;
  j["order"] = lt.labels;
  ordered_json cells = ordered_json::array();
  const int m = static_cast<int>(lt.order.size());
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      if (a == b) continue;
      ordered_json cell;
      cell["a"] = lt.labels[static_cast<size_t>(a)];
      cell["b"] = lt.labels[static_cast<size_t>(b)];
      cell["odds_ratio"] = lt.odds_ratio(a, b);
      cell["lo"] = lt.ci_lo(a, b);
      cell["hi"] = lt.ci_hi(a, b);
      cells.push_back(std::move(cell));
    }
  j["cells"] = std::move(cells);
  return j;
}

}  // namespace

std::string report_json(const analysis_report& r) {
  ordered_json j;
  j["method"] = r.summary_fit.method == fit_method::reml ? "reml" : "ml";
  j["reference"] = r.treatments.label_of(reference_id);
  j["treatments"] = r.treatments.labels;
  j["n_trials"] = r.n_trials;
  j["participants"] = r.participants;

  ordered_json fitj;
  fitj["tau"] = std::sqrt(r.summary_fit.tau2);
  fitj["tau2"] = r.summary_fit.tau2;
  fitj["loglik"] = r.summary_fit.loglik;
  fitj["converged"] = r.summary_fit.converged;
  fitj["iterations"] = r.summary_fit.iterations;
  fitj["at_upper_bound"] = r.summary_fit.at_upper_bound;
  ordered_json muj;
  for (int t = 1; t < r.treatments.size(); ++t)
    muj[r.treatments.label_of(t)] = r.summary_fit.mu(t - 1);
  fitj["mu"] = std::move(muj);
  j["fit"] = std::move(fitj);

  j["league"] = league_json(r.league);

  ordered_json forest = ordered_json::array();
  for (const auto& e : forest_data(r.league, r.treatments)) {
    ordered_json row;
    row["treatment"] = e.label;
    row["odds_ratio"] = e.odds_ratio;
    row["lo"] = e.lo;
    row["hi"] = e.hi;
    forest.push_back(std::move(row));
  }
  j["forest"] = std::move(forest);

  ordered_json res = ordered_json::array();
  for (const auto& rec : r.residuals) {
    ordered_json row;
    row["trial_id"] = rec.trial_id;
    row["study"] = rec.study;
    row["comparison"] = comp_label(rec.comp, r.treatments);
    row["phi"] = json_num(rec.phi);
    row["psi"] = json_num(rec.psi);
    row["boot_lo"] = json_opt(rec.boot_lo);
    row["boot_hi"] = json_opt(rec.boot_hi);
    row["flagged"] = rec.flagged;
    row["psi_computable"] = rec.computable;
    res.push_back(std::move(row));
  }
  j["residuals"] = std::move(res);

  ordered_json infl = ordered_json::array();
  for (const auto& rec : r.influence) {
    ordered_json row;
    row["trial_id"] = rec.trial_id;
    row["study"] = rec.study;
    row["covratio"] = json_num(rec.covratio);
    row["covratio_boot_p5"] = json_opt(rec.covratio_p05);
    row["covratio_flagged"] = rec.covratio_flagged;
    row["psiratio"] = json_opt(rec.psiratio);
    row["psiratio_boot_p5"] = json_opt(rec.psiratio_p05);
    row["psiratio_flagged"] = rec.psiratio_flagged;
    row["computable"] = rec.computable;
    infl.push_back(std::move(row));
  }
  j["influence"] = std::move(infl);

  ordered_json lrtj = ordered_json::array();
  for (const auto& rec : r.lrt) {
    ordered_json row;
    row["trial_id"] = rec.trial_id;
    row["study"] = rec.study;
    row["lrt"] = json_num(rec.T);
    row["df"] = rec.df;
    row["chi2_p"] = json_num(rec.chi2_p);
    row["boot_p95"] = json_opt(rec.boot_p95);
    row["boot_p"] = json_opt(rec.boot_p);
    row["flagged"] = rec.flagged;
    row["computable"] = rec.computable;
    lrtj.push_back(std::move(row));
  }
  j["lrt"] = std::move(lrtj);

  ordered_json flagsj = ordered_json::array();
  for (const auto& row : r.flags) {
    ordered_json f;
    f["trial_id"] = row.trial_id;
    f["study"] = row.study;
    f["psi"] = row.psi;
    f["covratio"] = row.covratio;
    f["psiratio"] = row.psiratio;
    f["lrt"] = row.lrt;
    f["any"] = row.any;
    f["all"] = row.all;
    flagsj.push_back(std::move(f));
  }
  j["flags"] = std::move(flagsj);

  ordered_json bootj;
  bootj["replicates"] = r.bootstrap_replicates;
  bootj["seed"] = r.seed;
  bootj["failures"] = r.bootstrap_failures;
  j["bootstrap"] = std::move(bootj);

  if (r.sensitivity) {
    ordered_json s;
    s["excluded"] = r.sensitivity->excluded;
    s["before"] = league_json(r.sensitivity->before);
    s["after"] = league_json(r.sensitivity->after);
    j["sensitivity"] = std::move(s);
  } else {
    j["sensitivity"] = nullptr;
  }
  return j.dump(2) + "\n";
}

std::vector<std::string> write_reports(const analysis_report& r, const run_config& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    const fs::path path = fs::path(config.out_dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write output file '" + path.string() + "'");
    out << content;
    written.push_back(path.string());
  };
  if (config.write_tsv) {
    emit("summary.tsv", summary_tsv(r));
    emit("league.tsv", league_tsv(r));
    emit("forest.tsv", forest_tsv(r));
    emit("residuals.tsv", residuals_tsv(r));
    emit("influence.tsv", influence_tsv(r));
    emit("lrt.tsv", lrt_tsv(r));
    emit("flags.tsv", flags_tsv(r));
    if (r.sensitivity) emit("sensitivity.tsv", sensitivity_tsv(r));
  }
  if (config.write_json) emit("report.json", report_json(r));
  return written;
}

}  // namespace nmadiag
