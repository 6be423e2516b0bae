#include "icudg/config.hpp"

#include <omp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "icudg/error.hpp"
#include "icudg/events.hpp"
#include "icudg/rng.hpp"

namespace icudg {
namespace {

using Section = std::map<std::string, std::string>;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& path, const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(path, "empty list item");
    out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

/// Typed access to one section; every key read is marked so that leftovers
/// can be reported as unknown.
class SectionReader {
 public:
  SectionReader(std::string name, const Section* section) : name_(std::move(name)), s_(section) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!s_) return std::nullopt;
    auto it = s_->find(key);
    if (it == s_->end()) return std::nullopt;
    return it->second;
  }

  std::string path(const std::string& key) const { return name_ + "." + key; }

  std::string str(const std::string& key, std::string fallback) {
    auto v = raw(key);
    return v ? *v : fallback;
  }

  double num(const std::string& key, double fallback) {
    auto v = raw(key);
    return v ? parse_double(path(key), *v) : fallback;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    auto v = raw(key);
    return v ? parse_u64(path(key), *v) : fallback;
  }

  std::size_t size(const std::string& key, std::size_t fallback) {
    return static_cast<std::size_t>(u64(key, fallback));
  }

  bool flag(const std::string& key, bool fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(path(key), "expected true or false, got '" + *v + "'");
  }

  /// Keys of the form prefix:name not yet consumed.
  std::vector<std::pair<std::string, std::string>> prefixed(const std::string& prefix) {
    std::vector<std::pair<std::string, std::string>> out;
    if (!s_) return out;
    for (const auto& [k, v] : *s_) {
      if (k.rfind(prefix, 0) == 0) {
        used_.insert(k);
        out.emplace_back(k.substr(prefix.size()), v);
      }
    }
    return out;
  }

  void finish() const {
    if (!s_) return;
    for (const auto& [k, v] : *s_)
      if (!used_.count(k)) throw ConfigError(path(k), "unknown key");
  }

  static double parse_double(const std::string& path, const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v))
      throw ConfigError(path, "expected a number, got '" + text + "'");
    return v;
  }

  static std::uint64_t parse_u64(const std::string& path, const std::string& text) {
    std::uint64_t v = 0;
    const char* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end)
      throw ConfigError(path, "expected a non-negative integer, got '" + text + "'");
    return v;
  }

 private:
  std::string name_;
  const Section* s_;
  std::set<std::string> used_;
};

std::map<std::string, Section> read_sections(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, Section> out;
  for (const auto& [name, node] : tree) {
    if (node.empty() && !node.data().empty()) throw ConfigError(name, "key outside of a section");
    Section& s = out[name];
    for (const auto& [k, v] : node) s[k] = trim(v.data());
  }
  return out;
}

void apply_override(std::map<std::string, Section>& sections, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(text, "override must be section.key=value");
  const std::string path = trim(text.substr(0, eq));
  const auto dot = path.rfind('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
    throw ConfigError(path, "override must be section.key=value");
  sections[path.substr(0, dot)][path.substr(dot + 1)] = trim(text.substr(eq + 1));
}

const std::set<std::string> kSettings{"single", "pooled_n_minus_1", "all", "oracle"};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, const std::vector<std::string>& overrides) {
  auto sections = read_sections(in);
  for (const auto& o : overrides) apply_override(sections, o);

  const std::set<std::string> known{"run",   "data",     "synth", "task",   "cohort", "protocol",
                                    "model", "train",    "objective", "search", "eval"};
  for (const auto& [name, s] : sections) {
    if (!known.count(name) && name.rfind("domain.", 0) != 0)
      throw ConfigError(name, "unknown section");
  }
  auto section = [&](const std::string& name) -> const Section* {
    auto it = sections.find(name);
    return it == sections.end() ? nullptr : &it->second;
  };

  ExperimentConfig c;
  {
    SectionReader r("run", section("run"));
    c.seed = r.u64("seed", c.seed);
    c.output_dir = r.str("output_dir", c.output_dir);
    if (auto w = r.raw("workers")) {
      c.workers = SectionReader::parse_u64(r.path("workers"), *w);
      require(*c.workers > 0, r.path("workers"), "must be positive");
    }
    r.finish();
  }
  {
    SectionReader r("data", section("data"));
    const std::string source = r.str("source", "synth");
    if (source == "synth") c.source = DataSource::kSynth;
    else if (source == "files") c.source = DataSource::kFiles;
    else throw ConfigError(r.path("source"), "expected synth or files, got '" + source + "'");
    c.statics_path = r.str("statics", "");
    c.events_path = r.str("events", "");
    c.catalog_path = r.str("catalog", "");
    if (c.source == DataSource::kFiles) {
      require(!c.statics_path.empty(), r.path("statics"), "required when source = files");
      require(!c.events_path.empty(), r.path("events"), "required when source = files");
    }
    r.finish();
  }
  {
    SectionReader r("synth", section("synth"));
    const auto ids = split_list(r.path("domains"), r.str("domains", "a,b,c,d"));
    DomainProfile base;
    base.n_stays = r.size("n_stays", 500);
    base.los_hours.mu = r.num("los_mu", base.los_hours.mu);
    base.los_hours.sigma = r.num("los_sigma", base.los_hours.sigma);
    r.finish();
    std::set<std::string> listed(ids.begin(), ids.end());
    require(listed.size() == ids.size(), r.path("domains"), "duplicate domain id");
    for (const auto& [name, s] : sections) {
      if (name.rfind("domain.", 0) == 0 && !listed.count(name.substr(7)))
        throw ConfigError(name, "domain is not listed in synth.domains");
    }
    for (const auto& id : ids) {
      const std::string name = "domain." + id;
      SectionReader d(name, section(name));
      DomainProfile p = base;
      p.domain_id = id;
      p.n_stays = d.size("n_stays", base.n_stays);
      p.los_hours.mu = d.num("los_mu", base.los_hours.mu);
      p.los_hours.sigma = d.num("los_sigma", base.los_hours.sigma);
      p.shift.prevalence_multiplier = d.num("prevalence_multiplier", 1.0);
      p.shift.measurement_rate_multiplier = d.num("measurement_rate_multiplier", 1.0);
      p.shift.coefficient_perturbation = d.num("coefficient_perturbation", 0.0);
      p.n_hospitals = d.size("n_hospitals", 0);
      p.antibiotics_whole_stay = d.flag("antibiotics_whole_stay", false);
      p.mortality.intercept = d.num("mortality_intercept", p.mortality.intercept);
      p.mortality.slope = d.num("mortality_slope", p.mortality.slope);
      p.aki.intercept = d.num("aki_intercept", p.aki.intercept);
      p.aki.slope = d.num("aki_slope", p.aki.slope);
      p.sepsis.intercept = d.num("sepsis_intercept", p.sepsis.intercept);
      p.sepsis.slope = d.num("sepsis_slope", p.sepsis.slope);
      for (const auto& [k, v] : d.prefixed("offset:"))
        p.shift.feature_mean_offsets[k] = SectionReader::parse_double(d.path("offset:" + k), v);
      for (const auto& [k, v] : d.prefixed("rate:"))
        p.measurement_rate[k] = SectionReader::parse_double(d.path("rate:" + k), v);
      d.finish();
      p.validate();
      c.domains.push_back(std::move(p));
    }
  }
  {
    SectionReader r("task", section("task"));
    try {
      c.task = task_from_string(r.str("name", "mortality"));
    } catch (const DataError& e) {
      throw ConfigError(r.path("name"), e.what());
    }
    try {
      c.sepsis_mode = labels::sepsis_mode_from_string(r.str("sepsis_mode", "abx_and_culture"));
    } catch (const Error& e) {
      throw ConfigError(r.path("sepsis_mode"), e.what());
    }
    try {
      c.aggregation = bin_aggregation_from_string(r.str("aggregation", "mean"));
    } catch (const Error& e) {
      throw ConfigError(r.path("aggregation"), e.what());
    }
    r.finish();
  }
  {
    SectionReader r("cohort", section("cohort"));
    c.cohort.min_los_hours = r.num("min_los_hours", c.cohort.min_los_hours);
    c.cohort.min_measured_bins = r.size("min_measured_hours", c.cohort.min_measured_bins);
    c.cohort.max_gap_hours = static_cast<long>(r.size("max_gap_hours", c.cohort.max_gap_hours));
    c.cohort.mortality_min_hours = r.num("mortality_min_hours", c.cohort.mortality_min_hours);
    c.cohort.min_onset_hours = r.num("min_onset_hours", c.cohort.min_onset_hours);
    c.cohort.max_baseline_creatinine =
        r.num("max_baseline_creatinine", c.cohort.max_baseline_creatinine);
    require(c.cohort.max_gap_hours > 0, r.path("max_gap_hours"), "must be positive");
    r.finish();
  }
  {
    SectionReader r("protocol", section("protocol"));
    c.protocol.settings = split_list(r.path("settings"), r.str("settings", join(c.protocol.settings)));
    for (const auto& s : c.protocol.settings)
      require(kSettings.count(s) > 0, r.path("settings"), "unknown setting '" + s + "'");
    if (auto t = r.raw("test_domains"); t && !t->empty())
      c.protocol.test_domains = split_list(r.path("test_domains"), *t);
    c.protocol.folds = r.size("folds", c.protocol.folds);
    c.protocol.test_fraction = r.num("test_fraction", c.protocol.test_fraction);
    c.protocol.fold_limit = r.size("fold_limit", c.protocol.fold_limit);
    require(c.protocol.folds >= 2, r.path("folds"), "must be at least 2");
    require(c.protocol.test_fraction > 0.0 && c.protocol.test_fraction < 1.0,
            r.path("test_fraction"), "must lie in (0, 1)");
    r.finish();
  }
  {
    SectionReader r("model", section("model"));
    auto& m = c.train.model;
    m.hidden_dim = r.size("hidden_dim", m.hidden_dim);
    m.layers = r.size("layers", m.layers);
    m.dropout = r.num("dropout", m.dropout);
    require(m.hidden_dim > 0, r.path("hidden_dim"), "must be positive");
    require(m.layers > 0, r.path("layers"), "must be positive");
    require(m.dropout >= 0.0 && m.dropout < 1.0, r.path("dropout"), "must lie in [0, 1)");
    r.finish();
  }
  {
    SectionReader r("train", section("train"));
    auto& t = c.train;
    t.learning_rate = r.num("learning_rate", t.learning_rate);
    t.weight_decay = r.num("weight_decay", t.weight_decay);
    t.batch_size = r.size("batch_size", t.batch_size);
    t.max_epochs = r.size("max_epochs", t.max_epochs);
    t.patience = r.size("patience", t.patience);
    const double clip = r.num("clip_norm", t.clip_norm.value_or(0.0));
    t.clip_norm = clip > 0.0 ? std::optional<double>(clip) : std::nullopt;
    try {
      t.pooling = pooling_from_string(r.str("pooling", std::string(to_string(t.pooling))));
    } catch (const Error& e) {
      throw ConfigError(r.path("pooling"), e.what());
    }
    require(t.learning_rate > 0.0, r.path("learning_rate"), "must be positive");
    require(t.weight_decay >= 0.0, r.path("weight_decay"), "must be non-negative");
    require(t.batch_size > 0, r.path("batch_size"), "must be positive");
    require(t.max_epochs > 0, r.path("max_epochs"), "must be positive");
    require(clip >= 0.0, r.path("clip_norm"), "must be non-negative");
    r.finish();
  }
  {
    SectionReader r("objective", section("objective"));
    c.objectives.clear();
    for (const auto& name : split_list(r.path("names"), r.str("names", "erm"))) {
      try {
        c.objectives.push_back(objective_from_string(name));
      } catch (const Error& e) {
        throw ConfigError(r.path("names"), e.what());
      }
    }
    auto& p = c.train.penalties;
    p.coral_gamma = r.num("coral_gamma", p.coral_gamma);
    p.coral_squared_mean = r.flag("coral_squared_mean", p.coral_squared_mean);
    p.vrex_lambda = r.num("vrex_lambda", p.vrex_lambda);
    p.vrex_warmup = r.size("vrex_warmup", p.vrex_warmup);
    p.fishr_lambda = r.num("fishr_lambda", p.fishr_lambda);
    p.fishr_warmup = r.size("fishr_warmup", p.fishr_warmup);
    p.fishr_ema = r.num("fishr_ema", p.fishr_ema);
    p.mldg_beta = r.num("mldg_beta", p.mldg_beta);
    p.mldg_n_meta_test = r.size("mldg_n_meta_test", p.mldg_n_meta_test);
    p.groupdro_eta = r.num("groupdro_eta", p.groupdro_eta);
    r.finish();
    p.validate();
  }
  {
    SectionReader r("search", section("search"));
    c.search.draws = r.size("draws", c.search.draws);
    c.search.space.model = r.flag("model", c.search.space.model);
    c.search.space.objective = r.flag("objective", c.search.space.objective);
    c.search.space.max_layers = r.size("max_layers", c.search.space.max_layers);
    require(c.search.space.max_layers > 0, r.path("max_layers"), "must be positive");
    r.finish();
  }
  {
    SectionReader r("eval", section("eval"));
    c.eval.calibration_bins = r.size("calibration_bins", c.eval.calibration_bins);
    c.eval.winsor_q = r.num("winsor_q", c.eval.winsor_q);
    require(c.eval.calibration_bins > 0, r.path("calibration_bins"), "must be positive");
    require(c.eval.winsor_q > 0.0 && c.eval.winsor_q <= 1.0, r.path("winsor_q"),
            "must lie in (0, 1]");
    r.finish();
  }
  return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  return parse_config(in, overrides);
}

std::string resolved_config_text(const ExperimentConfig& c) {
  std::ostringstream o;
  auto num = [](double v) { return format_double(v); };
  o << "[run]\nseed = " << c.seed << "\noutput_dir = " << c.output_dir << '\n';
  if (c.workers) o << "workers = " << *c.workers << '\n';

  o << "\n[data]\nsource = " << (c.source == DataSource::kSynth ? "synth" : "files") << '\n';
  if (!c.statics_path.empty()) o << "statics = " << c.statics_path << '\n';
  if (!c.events_path.empty()) o << "events = " << c.events_path << '\n';
  if (!c.catalog_path.empty()) o << "catalog = " << c.catalog_path << '\n';

  std::vector<std::string> ids;
  for (const auto& d : c.domains) ids.push_back(d.domain_id);
  o << "\n[synth]\ndomains = " << join(ids) << '\n';
  for (const auto& d : c.domains) {
    o << "\n[domain." << d.domain_id << "]\n"
      << "n_stays = " << d.n_stays << '\n'
      << "los_mu = " << num(d.los_hours.mu) << '\n'
      << "los_sigma = " << num(d.los_hours.sigma) << '\n'
      << "prevalence_multiplier = " << num(d.shift.prevalence_multiplier) << '\n'
      << "measurement_rate_multiplier = " << num(d.shift.measurement_rate_multiplier) << '\n'
      << "coefficient_perturbation = " << num(d.shift.coefficient_perturbation) << '\n'
      << "n_hospitals = " << d.n_hospitals << '\n'
      << "antibiotics_whole_stay = " << (d.antibiotics_whole_stay ? "true" : "false") << '\n'
      << "mortality_intercept = " << num(d.mortality.intercept) << '\n'
      << "mortality_slope = " << num(d.mortality.slope) << '\n'
      << "aki_intercept = " << num(d.aki.intercept) << '\n'
      << "aki_slope = " << num(d.aki.slope) << '\n'
      << "sepsis_intercept = " << num(d.sepsis.intercept) << '\n'
      << "sepsis_slope = " << num(d.sepsis.slope) << '\n';
    for (const auto& [k, v] : d.shift.feature_mean_offsets) o << "offset:" << k << " = " << num(v) << '\n';
    for (const auto& [k, v] : d.measurement_rate) o << "rate:" << k << " = " << num(v) << '\n';
  }

  o << "\n[task]\nname = " << to_string(c.task) << "\nsepsis_mode = " << to_string(c.sepsis_mode)
    << "\naggregation = " << to_string(c.aggregation) << '\n';

  o << "\n[cohort]\nmin_los_hours = " << num(c.cohort.min_los_hours)
    << "\nmin_measured_hours = " << c.cohort.min_measured_bins
    << "\nmax_gap_hours = " << c.cohort.max_gap_hours
    << "\nmortality_min_hours = " << num(c.cohort.mortality_min_hours)
    << "\nmin_onset_hours = " << num(c.cohort.min_onset_hours)
    << "\nmax_baseline_creatinine = " << num(c.cohort.max_baseline_creatinine) << '\n';

  o << "\n[protocol]\nsettings = " << join(c.protocol.settings)
    << "\ntest_domains = " << join(c.protocol.test_domains) << "\nfolds = " << c.protocol.folds
    << "\ntest_fraction = " << num(c.protocol.test_fraction)
    << "\nfold_limit = " << c.protocol.fold_limit << '\n';

  const auto& t = c.train;
  o << "\n[model]\nhidden_dim = " << t.model.hidden_dim << "\nlayers = " << t.model.layers
    << "\ndropout = " << num(t.model.dropout) << '\n';
  o << "\n[train]\nlearning_rate = " << num(t.learning_rate)
    << "\nweight_decay = " << num(t.weight_decay) << "\nbatch_size = " << t.batch_size
    << "\nmax_epochs = " << t.max_epochs << "\npatience = " << t.patience
    << "\nclip_norm = " << num(t.clip_norm.value_or(0.0)) << "\npooling = " << to_string(t.pooling)
    << '\n';

  std::vector<std::string> objs;
  for (const auto k : c.objectives) objs.emplace_back(to_string(k));
  const auto& p = t.penalties;
  o << "\n[objective]\nnames = " << join(objs) << "\ncoral_gamma = " << num(p.coral_gamma)
    << "\ncoral_squared_mean = " << (p.coral_squared_mean ? "true" : "false")
    << "\nvrex_lambda = " << num(p.vrex_lambda) << "\nvrex_warmup = " << p.vrex_warmup
    << "\nfishr_lambda = " << num(p.fishr_lambda) << "\nfishr_warmup = " << p.fishr_warmup
    << "\nfishr_ema = " << num(p.fishr_ema) << "\nmldg_beta = " << num(p.mldg_beta)
    << "\nmldg_n_meta_test = " << p.mldg_n_meta_test << "\ngroupdro_eta = " << num(p.groupdro_eta)
    << '\n';

  o << "\n[search]\ndraws = " << c.search.draws
    << "\nmodel = " << (c.search.space.model ? "true" : "false")
    << "\nobjective = " << (c.search.space.objective ? "true" : "false")
    << "\nmax_layers = " << c.search.space.max_layers << '\n';

  o << "\n[eval]\ncalibration_bins = " << c.eval.calibration_bins
    << "\nwinsor_q = " << num(c.eval.winsor_q) << '\n';
  return o.str();
}

std::string run_directory(const ExperimentConfig& config) {
  ExperimentConfig key = config;
  key.output_dir.clear();
  key.workers.reset();
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(CounterRng::hash(resolved_config_text(key))));
  return config.output_dir + "/run-" + hex;
}

std::size_t resolve_workers(const ExperimentConfig& config, std::optional<std::size_t> flag) {
  if (flag) {
    if (*flag == 0) throw ConfigError("--workers", "must be positive");
    return *flag;
  }
  if (const char* env = std::getenv("ICUDG_WORKERS"); env && *env) {
    const auto n = SectionReader::parse_u64("ICUDG_WORKERS", env);
    if (n == 0) throw ConfigError("ICUDG_WORKERS", "must be positive");
    return static_cast<std::size_t>(n);
  }
  if (config.workers) return *config.workers;
  return static_cast<std::size_t>(std::max(1, omp_get_num_procs()));
}

}  // namespace icudg
