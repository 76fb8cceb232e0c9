#include "mtcl/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mtcl/errors.hpp"

namespace mtcl {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ConfigStore ConfigStore::parse_text(const std::string& text, const std::string& origin) {
  ConfigStore store;
  store.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": key outside any [section]");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    store.values_[section + "." + key] = trim(t.substr(eq + 1));
  }
  return store;
}

ConfigStore ConfigStore::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path.string());
}

void ConfigStore::apply_override(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must have the form section.key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.find('.') == std::string::npos)
    throw ConfigError("override key '" + key + "' must be section-qualified (section.key)");
  values_[key] = trim(assignment.substr(eq + 1));
}

void ConfigStore::note(const std::string& key, const std::string& value) const {
  consumed_.insert(key);
  resolved_[key] = value;
}

std::string ConfigStore::get_string(const std::string& key, const std::string& def) const {
  auto it = values_.find(key);
  const std::string v = it == values_.end() ? def : it->second;
  note(key, v);
  return v;
}

long ConfigStore::get_long(const std::string& key, long def) const {
  auto it = values_.find(key);
  long v = def;
  if (it != values_.end()) {
    try {
      size_t pos = 0;
      v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(name() + ": key " + key + " expects an integer, got '" + it->second + "'");
    }
  }
  note(key, std::to_string(v));
  return v;
}

double ConfigStore::get_double(const std::string& key, double def) const {
  auto it = values_.find(key);
  double v = def;
  if (it != values_.end()) {
    try {
      size_t pos = 0;
      v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(name() + ": key " + key + " expects a number, got '" + it->second + "'");
    }
  }
  note(key, fmt_double(v));
  return v;
}

bool ConfigStore::get_bool(const std::string& key, bool def) const {
  auto it = values_.find(key);
  bool v = def;
  if (it != values_.end()) {
    const std::string& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on")
      v = true;
    else if (s == "false" || s == "0" || s == "no" || s == "off")
      v = false;
    else
      throw ConfigError(name() + ": key " + key + " expects a boolean, got '" + s + "'");
  }
  note(key, v ? "true" : "false");
  return v;
}

std::array<long, 3> ConfigStore::get_shape(const std::string& key,
                                           const std::array<long, 3>& def) const {
  auto it = values_.find(key);
  std::array<long, 3> v = def;
  if (it != values_.end()) {
    const auto parts = split_commas(it->second);
    if (parts.size() != 3)
      throw ConfigError(name() + ": key " + key + " expects h,w,d, got '" + it->second + "'");
    for (int i = 0; i < 3; ++i) {
      try {
        v[static_cast<size_t>(i)] = std::stol(parts[static_cast<size_t>(i)]);
      } catch (const std::exception&) {
        throw ConfigError(name() + ": key " + key + " expects integer extents");
      }
    }
  }
  note(key, std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]));
  return v;
}

std::array<double, 3> ConfigStore::get_triple(const std::string& key,
                                              const std::array<double, 3>& def) const {
  auto it = values_.find(key);
  std::array<double, 3> v = def;
  if (it != values_.end()) {
    const auto parts = split_commas(it->second);
    if (parts.size() != 3)
      throw ConfigError(name() + ": key " + key + " expects three comma-separated numbers");
    for (int i = 0; i < 3; ++i) {
      try {
        v[static_cast<size_t>(i)] = std::stod(parts[static_cast<size_t>(i)]);
      } catch (const std::exception&) {
        throw ConfigError(name() + ": key " + key + " expects numbers");
      }
    }
  }
  note(key, fmt_double(v[0]) + "," + fmt_double(v[1]) + "," + fmt_double(v[2]));
  return v;
}

std::vector<uint64_t> ConfigStore::get_seeds(const std::string& key,
                                             const std::vector<uint64_t>& def) const {
  auto it = values_.find(key);
  std::vector<uint64_t> v = def;
  if (it != values_.end()) {
    v.clear();
    for (const auto& part : split_commas(it->second)) {
      try {
        v.push_back(std::stoull(part));
      } catch (const std::exception&) {
        throw ConfigError(name() + ": key " + key + " expects integer seeds");
      }
    }
    if (v.empty()) throw ConfigError(name() + ": key " + key + " must list at least one seed");
  }
  std::string rendered;
  for (uint64_t s : v) rendered += (rendered.empty() ? "" : ",") + std::to_string(s);
  note(key, rendered);
  return v;
}

std::vector<std::string> ConfigStore::get_list(const std::string& key,
                                               const std::vector<std::string>& def) const {
  auto it = values_.find(key);
  std::vector<std::string> v = it == values_.end() ? def : split_commas(it->second);
  std::string rendered;
  for (const auto& s : v) rendered += (rendered.empty() ? "" : ",") + s;
  note(key, rendered);
  return v;
}

void ConfigStore::reject_unknown() const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) unknown.push_back(key);
  if (!unknown.empty()) {
    std::string msg = name() + ": unknown configuration key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
}

std::string ConfigStore::resolved_text() const {
  // resolved_ is sorted by key, so sections come out grouped.
  std::ostringstream os;
  std::string section;
  for (const auto& [key, value] : resolved_) {
    const size_t dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
  return os.str();
}

ResolvedRun resolve_run(const ConfigStore& store) {
  ResolvedRun run;

  const Scale scale = parse_scale(store.get_string("model.scale", "tiny"));
  ModelConfig mc = scale == Scale::full ? ModelConfig::full_defaults() : ModelConfig::tiny_defaults();
  mc.in_shape = store.get_shape("model.in_shape", mc.in_shape);
  mc.feature_channels = store.get_long("model.feature_channels", mc.feature_channels);
  mc.embed_dim = store.get_long("model.embed_dim", mc.embed_dim);
  mc.dropout_rate = store.get_double("model.dropout", mc.dropout_rate);
  mc.warmup_epochs = store.get_long("model.warmup_epochs", mc.warmup_epochs);
  mc.alpha = store.get_double("model.alpha", mc.alpha);
  mc.beta = store.get_double("model.beta", mc.beta);
  mc.temperature = store.get_double("model.temperature", mc.temperature);
  mc.seed = static_cast<uint64_t>(store.get_long("model.seed", 1));
  mc.common_feed = parse_common_feed(store.get_string("model.common_feed", "raw"));
  mc.disentangle_kernel_depth = store.get_long("model.disentangle_kernel_depth", 2);
  mc.validate();

  TrainConfig& tc = run.train;
  tc.model = mc;
  tc.lr = store.get_double("train.lr", 1e-3);
  tc.weight_decay = store.get_double("train.weight_decay", 1e-3);
  tc.epochs = store.get_long("train.epochs", 100);
  tc.batch_size = store.get_long("train.batch_size", 0);
  tc.ablation.tc = store.get_bool("train.tc", true);
  tc.ablation.l_con = store.get_bool("train.l_con", true);
  tc.ablation.aux = store.get_bool("train.aux", true);
  tc.baseline = parse_baseline_mode(store.get_string("train.baseline", "proposed"));
  tc.seeds = store.get_seeds("train.seeds", {1, 2, 3});
  tc.eval_every = store.get_long("train.eval_every", 1);
  tc.deterministic = store.get_bool("train.deterministic", true);
  tc.threshold = store.get_double("train.threshold", 0.5);

  run.data.manifest = store.get_string("data.manifest", "");
  run.data.train_fractions = store.get_triple("data.train_fractions", {0.7, 0.7, 0.7});
  run.data.split_seed = static_cast<uint64_t>(store.get_long("data.split_seed", 17));
  tc.augment.enabled = store.get_bool("data.augment", true);
  tc.augment.flip_prob = store.get_double("data.flip_prob", 0.5);
  tc.augment.noise_sigma = store.get_double("data.noise_sigma", 0.01);
  tc.augment.crop_fraction = store.get_double("data.crop_fraction", 0.9);
  tc.validate();

  SyntheticSpec& ss = run.synth;
  ss.n_samples = store.get_long("synth.n", 200);
  ss.shape = store.get_shape("synth.shape", {16, 16, 8});
  ss.prevalence_grade = store.get_double("synth.prevalence_grade", 0.3);
  ss.prevalence_invasion = store.get_double("synth.prevalence_invasion", 0.1);
  ss.signal_common = store.get_double("synth.signal_common", 1.0);
  ss.signal_grade = store.get_double("synth.signal_grade", 0.5);
  ss.signal_invasion = store.get_double("synth.signal_invasion", 0.5);
  ss.noise_sigma = store.get_double("synth.noise_sigma", 0.25);
  ss.seed = static_cast<uint64_t>(store.get_long("synth.seed", 1));

  std::vector<std::string> default_rows;
  for (const auto& row : default_ablation_rows()) default_rows.push_back(row.name);
  run.ablation_rows = store.get_list("ablation.rows", default_rows);
  for (const auto& row : run.ablation_rows) ablation_row_by_name(row);

  store.reject_unknown();
  return run;
}

}  // namespace mtcl
