#include "nmadiag/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace nmadiag {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out = s.substr(b, e - b);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"')
    out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double parse_number(const std::string& field, const char* what, int line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw ingest_error("line " + std::to_string(line_no) + ": cannot parse " + what +
                       " '" + field + "'");
  }
}

}  // namespace

parsed_data parse_trials(std::istream& source, const format_config& config) {
  std::string header;
  if (!std::getline(source, header)) return {};
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const char delim = config.delimiter != '\0'
                         ? config.delimiter
                         : (header.find('\t') != std::string::npos ? '\t' : ',');

  const auto cols = split(header, delim);
  int c_study = -1, c_year = -1, c_treat = -1, c_events = -1, c_size = -1;
  for (int i = 0; i < static_cast<int>(cols.size()); ++i) {
    const std::string name = lower(cols[i]);
    if (name == "study") c_study = i;
    else if (name == "year") c_year = i;
    else if (name == "treatment") c_treat = i;
    else if (name == "events") c_events = i;
    else if (name == "size") c_size = i;
  }
  if (c_study < 0 || c_treat < 0 || c_events < 0 || c_size < 0)
    throw ingest_error("header must contain study, treatment, events, size columns");

  struct raw_arm {
    std::string treatment;
    double events, size;
    int line;
  };
  std::vector<std::string> study_order;
  std::map<std::string, std::vector<raw_arm>> arms_of;
  std::map<std::string, int> year_of;
  std::set<std::string> seen_treatments_in_order_helper;
  std::vector<std::string> treatment_order_seen;

  std::string line;
  int line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, delim);
    const int needed = std::max({c_study, c_year, c_treat, c_events, c_size});
    if (static_cast<int>(fields.size()) <= needed)
      throw ingest_error("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(needed + 1) + " fields, got " +
                         std::to_string(fields.size()));
    const std::string study = fields[c_study];
    const std::string treat = fields[c_treat];
    if (study.empty())
      throw ingest_error("line " + std::to_string(line_no) + ": empty study label");
    if (treat.empty())
      throw ingest_error("line " + std::to_string(line_no) + ": empty treatment label");
    const double events = parse_number(fields[c_events], "events", line_no);
    const double size = parse_number(fields[c_size], "size", line_no);
    if (events < 0.0)
      throw ingest_error("line " + std::to_string(line_no) + ": negative events");
    if (size <= 0.0)
      throw ingest_error("line " + std::to_string(line_no) + ": nonpositive size");
    if (events > size)
      throw ingest_error("line " + std::to_string(line_no) + ": events exceed size");

    if (!arms_of.count(study)) {
      study_order.push_back(study);
      year_of[study] = (c_year >= 0 && !fields[c_year].empty())
                           ? static_cast<int>(parse_number(fields[c_year], "year", line_no))
                           : 0;
    }
    for (const auto& a : arms_of[study])
      if (a.treatment == treat)
        throw ingest_error("line " + std::to_string(line_no) + ": duplicate arm (" +
                           study + ", " + treat + ")");
    arms_of[study].push_back({treat, events, size, line_no});
    if (!seen_treatments_in_order_helper.count(treat)) {
      seen_treatments_in_order_helper.insert(treat);
      treatment_order_seen.push_back(treat);
    }
  }

  parsed_data out;
  if (config.treatments) {
    out.treatments.labels = *config.treatments;
    if (out.treatments.labels.empty() ||
        out.treatments.labels.front() != config.reference_label)
      throw config_error("explicit treatment list must start with the reference label");
  } else {
    std::vector<std::string> others;
    bool saw_reference = false;
    for (const auto& t : treatment_order_seen) {
      if (t == config.reference_label) saw_reference = true;
      else others.push_back(t);
    }
    if (!saw_reference && !treatment_order_seen.empty())
      throw ingest_error("reference treatment '" + config.reference_label +
                         "' absent from input");
    std::sort(others.begin(), others.end());
    out.treatments.labels.push_back(config.reference_label);
    for (auto& t : others) out.treatments.labels.push_back(std::move(t));
  }

  int next_id = 1;
  for (const auto& study : study_order) {
    trial t;
    t.id = next_id++;
    t.label = study;
    t.year = year_of[study];
    for (const auto& a : arms_of[study]) {
      const int tid = out.treatments.id_of(a.treatment);
      if (tid < 0)
        throw ingest_error("line " + std::to_string(a.line) + ": unknown treatment '" +
                           a.treatment + "'");
      t.arms.push_back({tid, a.events, a.size, false});
    }
    if (t.arms.size() < 2)
      throw ingest_error("study '" + study + "' has fewer than two arms");
    out.trials.push_back(std::move(t));
  }
  return out;
}

parsed_data parse_trials_file(const std::string& path, const format_config& config) {
  std::ifstream in(path);
  if (!in) throw ingest_error("cannot open input file '" + path + "'");
  return parse_trials(in, config);
}

namespace {

network_summary build_summary(const std::vector<trial>& trials, int n_treatments) {
  network_summary out;
  out.nodes = n_treatments;
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : trials) {
    for (size_t i = 0; i < t.arms.size(); ++i)
      for (size_t j = i + 1; j < t.arms.size(); ++j) {
        int a = t.arms[i].treatment, b = t.arms[j].treatment;
        if (a > b) std::swap(a, b);
        ++edge_count[{a, b}];
      }
  }
  for (const auto& [e, c] : edge_count) out.edges.push_back({e.first, e.second, c});

  // union-find over treatment ids
  std::vector<int> parent(static_cast<size_t>(n_treatments));
  for (int i = 0; i < n_treatments; ++i) parent[static_cast<size_t>(i)] = i;
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };
  for (const auto& e : out.edges) {
    if (e.a >= n_treatments || e.b >= n_treatments) continue;
    parent[static_cast<size_t>(find(e.a))] = find(e.b);
  }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n_treatments; ++i) groups[find(i)].push_back(i);
  for (auto& [root, members] : groups) out.components.push_back(std::move(members));
  return out;
}

}  // namespace

network_summary summarize_network(const std::vector<trial>& trials, int n_treatments) {
  return build_summary(trials, n_treatments);
}

network_summary validate_network(const std::vector<trial>& trials, int n_treatments) {
  if (trials.empty()) throw ingest_error("no trials to validate");
  auto summary = build_summary(trials, n_treatments);
  if (!summary.connected()) {
    std::ostringstream msg;
    msg << "treatment network is disconnected; components:";
    for (const auto& comp : summary.components) {
      msg << " {";
      for (size_t i = 0; i < comp.size(); ++i) msg << (i ? "," : "") << comp[i];
      msg << "}";
    }
    throw ingest_error(msg.str());
  }
  return summary;
}

trial apply_continuity_correction(const trial& t, double increment) {
  if (increment <= 0.0) throw config_error("continuity increment must be positive");
  bool needs = false;
  for (const auto& a : t.arms)
    if (!a.pseudo && (a.events == 0.0 || a.events == a.size)) needs = true;
  if (!needs) return t;
  trial out = t;
  out.corrected = true;
  for (auto& a : out.arms) {
    if (a.pseudo) continue;
    a.events += increment;
    a.size += 2.0 * increment;
  }
  return out;
}

trial augment_reference(const trial& t, double d0, double n0) {
  if (d0 <= 0.0 || n0 <= d0)
    throw config_error("augmentation requires 0 < d0 < n0");
  if (t.has_treatment(reference_id)) return t;
  trial out = t;
  out.augmented = true;
  out.arms.push_back({reference_id, d0, n0, true});
  return out;
}

namespace {

double log_odds(const trial_arm& a, const trial& t) {
  if (a.events <= 0.0 || a.events >= a.size)
    throw ingest_error("trial '" + t.label +
                       "': zero or full cell; apply a continuity correction first");
  return std::log(a.events / (a.size - a.events));
}

double var_term(const trial_arm& a) {
  return 1.0 / a.events + 1.0 / (a.size - a.events);
}

contrast_data contrasts_vs(const trial& t, int reference, bool drop_pseudo) {
  const trial_arm* ref = nullptr;
  for (const auto& a : t.arms)
    if (a.treatment == reference) ref = &a;
  if (!ref)
    throw ingest_error("trial '" + t.label + "' has no arm for reference treatment " +
                       std::to_string(reference));

  contrast_data cd;
  cd.trial_id = t.id;
  cd.label = t.label;
  cd.augmented = t.augmented && !drop_pseudo;
  for (const auto& a : t.arms)
    if (!a.pseudo) cd.arm_treatments.push_back(a.treatment);

  std::vector<const trial_arm*> rows;
  for (const auto& a : t.arms) {
    if (a.treatment == reference) continue;
    if (drop_pseudo && a.pseudo) continue;
    rows.push_back(&a);
  }
  const int m = static_cast<int>(rows.size());
  cd.y.resize(m);
  cd.S.resize(m, m);
  const double ref_lo = log_odds(*ref, t);
  const double ref_v = var_term(*ref);
  for (int j = 0; j < m; ++j) {
    cd.comps.push_back({rows[static_cast<size_t>(j)]->treatment, reference});
    cd.y(j) = log_odds(*rows[static_cast<size_t>(j)], t) - ref_lo;
    for (int k = 0; k < m; ++k) cd.S(j, k) = ref_v;
    cd.S(j, j) += var_term(*rows[static_cast<size_t>(j)]);
  }
  return cd;
}

}  // namespace

contrast_data compute_contrasts(const trial& t, int reference) {
  return contrasts_vs(t, reference, false);
}

contrast_data rebase_contrasts(const trial& t, int new_reference) {
  bool is_real_arm = false;
  for (const auto& a : t.arms)
    if (a.treatment == new_reference && !a.pseudo) is_real_arm = true;
  if (!is_real_arm)
    throw ingest_error("trial '" + t.label + "': re-basing arm " +
                       std::to_string(new_reference) + " is not a real arm");
  return contrasts_vs(t, new_reference, true);
}

std::vector<contrast_data> build_contrast_dataset(const std::vector<trial>& trials,
                                                  const pipeline_options& opts) {
  std::vector<contrast_data> out;
  out.reserve(trials.size());
  for (const auto& t : trials) {
    trial prepared = augment_reference(apply_continuity_correction(t, opts.correction_increment),
                                       opts.augment_events, opts.augment_size);
    out.push_back(compute_contrasts(prepared));
  }
  return out;
}

rebase_map make_rebase_map(const contrast_data& cd, int new_reference) {
  bool found = false;
  for (int t : cd.arm_treatments)
    if (t == new_reference) found = true;
  if (!found)
    throw ingest_error("trial '" + cd.label + "': re-basing arm " +
                       std::to_string(new_reference) + " is not a real arm");

  // row index of each treatment's contrast vs the stored reference
  auto row_of = [&](int treatment) {
    for (size_t j = 0; j < cd.comps.size(); ++j)
      if (cd.comps[j].a == treatment) return static_cast<int>(j);
    return -1;  // the stored reference itself (virtual zero row)
  };

  rebase_map map;
  std::vector<Eigen::RowVectorXd> rows;
  for (int a : cd.arm_treatments) {
    if (a == new_reference) continue;
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(cd.rows());
    if (int ja = row_of(a); ja >= 0) r(ja) += 1.0;
    if (int jb = row_of(new_reference); jb >= 0) r(jb) -= 1.0;
    rows.push_back(std::move(r));
    map.comps.push_back({a, new_reference});
  }
  map.C.resize(static_cast<int>(rows.size()), cd.rows());
  for (int j = 0; j < map.C.rows(); ++j) map.C.row(j) = rows[static_cast<size_t>(j)];
  return map;
}

contrast_data apply_rebase(const contrast_data& cd, const rebase_map& map) {
  contrast_data out;
  out.trial_id = cd.trial_id;
  out.label = cd.label;
  out.comps = map.comps;
  out.y = map.C * cd.y;
  out.S = map.C * cd.S * map.C.transpose();
  out.arm_treatments = cd.arm_treatments;
  out.augmented = false;
  return out;
}

}  // namespace nmadiag
