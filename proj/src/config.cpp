#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "advbench/harness.hpp"
#include "advbench/rng.hpp"

namespace advbench {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

double parse_real(const std::string& text, const std::string& whole) {
  const std::string t = trim(text);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
    bad("cannot parse '" + whole + "' as a number or fraction");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) out.push_back(part);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::size_t parse_count(const std::string& text, const std::string& key) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    bad("synthetic spec: '" + key + "' needs a non-negative integer, got '" + text + "'");
  }
  return v;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) bad("unknown field '" + key + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad(std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

double parse_fraction(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) return parse_real(text, text);
  const double num = parse_real(text.substr(0, slash), text);
  const double den = parse_real(text.substr(slash + 1), text);
  if (den == 0.0) bad("zero denominator in '" + text + "'");
  return num / den;
}

double fraction_from_json(const json& value, const std::string& field) {
  if (value.is_number()) return value.get<double>();
  if (value.is_string()) return parse_fraction(value.get<std::string>());
  bad("field '" + field + "' must be a number or a fraction string");
}

// ---------------------------------------------------------------------------

DatasetSource DatasetSource::parse(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) bad("dataset spec needs a kind prefix: '" + spec + "'");
  const std::string kind = spec.substr(0, colon), rest = spec.substr(colon + 1);
  DatasetSource s;
  if (kind == "idx") {
    s.kind = Kind::kIdx;
    s.name = "idx";
    auto parts = split(rest, ',');
    if (parts.size() == 1) {
      const std::filesystem::path dir = parts[0];
      s.paths = {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
                 dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"};
    } else if (parts.size() == 4) {
      s.paths.assign(parts.begin(), parts.end());
    } else {
      bad("idx spec takes a directory or four comma-separated paths");
    }
  } else if (kind == "synth") {
    s.kind = Kind::kSynthetic;
    s.name = "synth";
    for (const auto& item : split(rest, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) bad("synthetic spec entries are key=value, got '" + item + "'");
      const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
      if (key == "seed") s.synth_seed = parse_count(val, key);
      else if (key == "train") s.synth_train_per_class = parse_count(val, key);
      else if (key == "test") s.synth_test_per_class = parse_count(val, key);
      else if (key == "classes") s.num_classes = parse_count(val, key);
      else if (key == "h") s.synth_h = parse_count(val, key);
      else if (key == "w") s.synth_w = parse_count(val, key);
      else bad("unknown synthetic spec key '" + key + "'");
    }
  } else if (kind == "cache") {
    s.kind = Kind::kCache;
    s.name = "cache";
    auto parts = split(rest, ',');
    if (parts.size() != 2) bad("cache spec takes <train-cache>,<test-cache>");
    s.paths.assign(parts.begin(), parts.end());
  } else {
    bad("unknown dataset kind '" + kind + "'");
  }
  return s;
}

std::string DatasetSource::spec() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kIdx:
    case Kind::kCache:
      os << (kind == Kind::kIdx ? "idx:" : "cache:");
      for (std::size_t i = 0; i < paths.size(); ++i) os << (i ? "," : "") << paths[i].string();
      break;
    case Kind::kSynthetic:
      os << "synth:seed=" << synth_seed << ",train=" << synth_train_per_class
         << ",test=" << synth_test_per_class << ",classes=" << num_classes << ",h=" << synth_h
         << ",w=" << synth_w;
      break;
  }
  return os.str();
}

namespace {

LabeledDataset renamed(LabeledDataset ds, const std::string& name) {
  ds.name = name;
  return ds;
}

}  // namespace

LabeledDataset load_test_split(const DatasetSource& source) {
  switch (source.kind) {
    case DatasetSource::Kind::kIdx:
      return load_idx(source.paths.at(2), source.paths.at(3), source.num_classes, source.name);
    case DatasetSource::Kind::kSynthetic:
      return renamed(synth_shapes(CounterRng::mix(source.synth_seed + 1), source.synth_test_per_class,
                                  source.num_classes, source.synth_h, source.synth_w),
                     source.name);
    case DatasetSource::Kind::kCache:
      return renamed(load_dataset(source.paths.at(1)), source.name);
  }
  bad("unknown dataset kind");
}

LoadedData load_source(const DatasetSource& source) {
  LoadedData out;
  switch (source.kind) {
    case DatasetSource::Kind::kIdx:
      out.train = load_idx(source.paths.at(0), source.paths.at(1), source.num_classes, source.name);
      break;
    case DatasetSource::Kind::kSynthetic:
      out.train = renamed(synth_shapes(source.synth_seed, source.synth_train_per_class,
                                       source.num_classes, source.synth_h, source.synth_w),
                          source.name);
      break;
    case DatasetSource::Kind::kCache:
      out.train = renamed(load_dataset(source.paths.at(0)), source.name);
      break;
  }
  out.test = load_test_split(source);
  if (out.train.empty() || out.test.empty()) {
    throw Error(ErrorCode::kEmptyDataset, "dataset '" + source.spec() + "' has an empty split");
  }
  if (source.validation_count > 0) {
    if (source.validation_count >= out.train.size()) {
      bad("validation_count " + std::to_string(source.validation_count) +
          " leaves no training samples");
    }
    auto [train, val] = split_at(out.train, out.train.size() - source.validation_count);
    out.train = std::move(train);
    out.validation = std::move(val);
  } else {
    out.validation = out.test;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(Architecture arch) {
  return arch == Architecture::kPaperCnn ? "paper_cnn" : "tiny_cnn";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "paper_cnn") return Architecture::kPaperCnn;
  if (name == "tiny_cnn") return Architecture::kTinyCnn;
  bad("unknown architecture '" + name + "'");
}

std::vector<LayerSpec> tiny_cnn_layers(std::size_t num_classes) {
  return {Conv2D{8, 3, 1, 1}, ReLU{}, MaxPool2D{2}, Flatten{}, Dense{num_classes}};
}

Network build_network(Architecture arch, const Shape& sample_shape, std::size_t num_classes,
                      std::uint64_t seed) {
  if (arch == Architecture::kPaperCnn) {
    return Network::initialized(paper_cnn_layers(num_classes), sample_shape, seed);
  }
  return Network::initialized(tiny_cnn_layers(num_classes), sample_shape, seed);
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (attacks.empty()) bad("config needs at least one attack");
  if (defenses.empty()) bad("config needs at least one defense (\"none\" is allowed)");
  if (epsilons.empty()) bad("config needs at least one epsilon");
  if (property_axis.empty()) bad("config needs at least one property setting");
  for (double e : epsilons) {
    if (!(e > 0.0 && e <= 1.0)) bad("epsilon " + std::to_string(e) + " outside (0, 1]");
  }
  if (alpha_over_eps && !(*alpha_over_eps > 0.0)) bad("alpha_over_eps must be > 0");
  for (const auto& p : property_axis) p.validate();
  for (const auto& d : defenses) d.validate();
  if (eval_samples < 1) bad("eval_samples must be >= 1");
  train.validate();
}

namespace {

DatasetSource dataset_from_json(const json& j) {
  if (j.is_string()) return DatasetSource::parse(j.get<std::string>());
  if (!j.is_object()) bad("field 'dataset' must be a spec string or an object");
  reject_unknown(j, {"spec", "name", "num_classes", "validation_count"}, "dataset");
  if (!j.contains("spec")) bad("dataset object needs 'spec'");
  DatasetSource s = DatasetSource::parse(j.at("spec").get<std::string>());
  s.name = get_or<std::string>(j, "name", s.name);
  s.num_classes = get_or<std::size_t>(j, "num_classes", s.num_classes);
  s.validation_count = get_or<std::size_t>(j, "validation_count", 0);
  if (s.name.find_first_of(",\n\"") != std::string::npos) bad("dataset name may not hold , \" or newlines");
  return s;
}

AttackSpec attack_from_json(const json& j) {
  AttackSpec s;
  s.iterations = 0;  // preset
  if (j.is_string()) {
    s.method = parse_attack_method(j.get<std::string>());
    return s;
  }
  reject_unknown(j, {"method", "iterations", "random_start", "overshoot"}, "attack");
  s.method = parse_attack_method(get_or<std::string>(j, "method", ""));
  s.iterations = get_or<std::size_t>(j, "iterations", 0);
  s.random_start = get_or<bool>(j, "random_start", false);
  if (j.contains("overshoot")) s.overshoot = static_cast<float>(fraction_from_json(j["overshoot"], "overshoot"));
  return s;
}

DefenseSpec defense_from_json(const json& j) {
  DefenseSpec s;
  if (j.is_string()) {
    s.method = parse_defense_method(j.get<std::string>());
    return s;
  }
  reject_unknown(j, {"method", "quality", "lambda", "iterations", "step", "dropout_rate", "seed"},
                 "defense");
  s.method = parse_defense_method(get_or<std::string>(j, "method", ""));
  s.quality = get_or<int>(j, "quality", s.quality);
  if (j.contains("lambda")) s.lambda = static_cast<float>(fraction_from_json(j["lambda"], "lambda"));
  s.iterations = get_or<std::size_t>(j, "iterations", s.iterations);
  if (j.contains("step")) s.step = static_cast<float>(fraction_from_json(j["step"], "step"));
  if (j.contains("dropout_rate")) {
    s.dropout_rate = static_cast<float>(fraction_from_json(j["dropout_rate"], "dropout_rate"));
  }
  s.seed = get_or<std::uint64_t>(j, "seed", 0);
  return s;
}

TrainConfig train_from_json(const json& j) {
  reject_unknown(j,
                 {"optimizer", "lr", "beta1", "beta2", "momentum", "weight_decay", "epochs",
                  "batch_size", "plateau", "seed"},
                 "train");
  TrainConfig t;
  const std::string opt = get_or<std::string>(j, "optimizer", "adam");
  if (opt == "adam") {
    AdamConfig a;
    a.lr = get_or<double>(j, "lr", a.lr);
    a.beta1 = get_or<double>(j, "beta1", a.beta1);
    a.beta2 = get_or<double>(j, "beta2", a.beta2);
    t.optimizer = a;
  } else if (opt == "sgd") {
    SgdMomentumConfig s;
    s.lr = get_or<double>(j, "lr", s.lr);
    s.momentum = get_or<double>(j, "momentum", s.momentum);
    s.weight_decay = get_or<double>(j, "weight_decay", s.weight_decay);
    t.optimizer = s;
  } else {
    bad("unknown optimizer '" + opt + "'");
  }
  t.epochs = get_or<std::size_t>(j, "epochs", t.epochs);
  t.batch_size = get_or<std::size_t>(j, "batch_size", t.batch_size);
  t.seed = get_or<std::uint64_t>(j, "seed", t.seed);
  if (j.contains("plateau")) {
    const json& p = j["plateau"];
    if (p.is_null()) {
      t.lr_schedule.reset();
    } else {
      reject_unknown(p, {"factor", "patience", "threshold"}, "train.plateau");
      PlateauSchedule s;
      s.factor = get_or<double>(p, "factor", s.factor);
      s.patience = get_or<std::size_t>(p, "patience", s.patience);
      s.threshold = get_or<double>(p, "threshold", s.threshold);
      t.lr_schedule = s;
    }
  }
  return t;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) bad("config must be a JSON object");
  reject_unknown(j,
                 {"dataset", "property_axis", "attacks", "defenses", "epsilons", "alpha_over_eps",
                  "train", "architecture", "eval_samples", "seed", "output_dir"},
                 "config");
  ExperimentConfig c;
  if (!j.contains("dataset")) bad("config needs 'dataset'");
  c.dataset = dataset_from_json(j["dataset"]);
  if (j.contains("property_axis")) {
    c.property_axis.clear();
    for (const auto& p : j["property_axis"]) {
      reject_unknown(p, {"kind", "factor"}, "property_axis entry");
      PropertySetting s;
      s.kind = parse_property_kind(get_or<std::string>(p, "kind", ""));
      if (!p.contains("factor")) bad("property_axis entry needs 'factor'");
      s.factor = fraction_from_json(p["factor"], "factor");
      c.property_axis.push_back(s);
    }
  }
  for (const auto& a : j.value("attacks", json::array())) c.attacks.push_back(attack_from_json(a));
  if (j.contains("defenses")) {
    c.defenses.clear();
    for (const auto& d : j["defenses"]) c.defenses.push_back(defense_from_json(d));
  }
  for (const auto& e : j.value("epsilons", json::array())) {
    c.epsilons.push_back(fraction_from_json(e, "epsilons"));
  }
  if (j.contains("alpha_over_eps")) c.alpha_over_eps = fraction_from_json(j["alpha_over_eps"], "alpha_over_eps");
  if (j.contains("train")) c.train = train_from_json(j["train"]);
  c.architecture = parse_architecture(get_or<std::string>(j, "architecture", "paper_cnn"));
  c.eval_samples = get_or<std::size_t>(j, "eval_samples", c.eval_samples);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (!j.contains("train") || !j["train"].contains("seed")) c.train.seed = c.seed;
  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir.string());
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  return from_json(j);
}

AttackSpec cell_attack_spec(const ExperimentConfig& cfg, const AttackSpec& base, double eps) {
  AttackSpec s = AttackSpec::preset(base.method, static_cast<float>(eps), cfg.seed);
  if (cfg.alpha_over_eps) s.alpha = static_cast<float>(eps * *cfg.alpha_over_eps);
  if (base.iterations > 0) s.iterations = base.iterations;
  s.random_start = base.random_start;
  s.overshoot = base.overshoot;
  s.validate();
  return s;
}

}  // namespace advbench
