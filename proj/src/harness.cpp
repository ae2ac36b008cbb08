#include "advbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <optional>
#include <mutex>
#include <thread>

#include "advbench/container.hpp"
#include "advbench/rng.hpp"

namespace advbench {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string fnv1a_hex(const std::string& text) {
  return fnv1a_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::size_t worker_count() {
  if (const char* env = std::getenv("ADVBENCH_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("ADVBENCH_WORKERS must be a positive integer, got '") + env + "'");
    }
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < failed_index) {
            failed_index = i;
            failure = std::current_exception();
          }
          next.store(n);
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------

std::vector<Tensor> craft_adversarials(const Network& net, const LabeledDataset& data,
                                       const AttackSpec& spec, std::size_t workers) {
  spec.validate();
  std::vector<Tensor> out(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    AttackSpec s = spec;
    s.seed = CounterRng::mix(spec.seed + i);
    out[i] = run_attack(net, s, data.images[i], data.labels[i]).adversarial;
  });
  return out;
}

std::vector<Tensor> apply_defense_all(const DefenseSpec& spec, const std::vector<Tensor>& images,
                                      std::size_t workers) {
  spec.validate();
  std::vector<Tensor> out(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) {
    DefenseSpec s = spec;
    s.seed = CounterRng::mix(spec.seed + i);
    out[i] = apply_defense(s, images[i]);
  });
  return out;
}

double accuracy_on(const Network& net, const std::vector<Tensor>& images,
                   const std::vector<int>& labels) {
  if (images.size() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "accuracy_on: image/label count mismatch");
  }
  if (images.empty()) throw Error(ErrorCode::kEmptyDataset, "accuracy_on: no samples");
  constexpr std::size_t kBatch = 256;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < images.size(); b += kBatch) {
    const std::size_t n = std::min(kBatch, images.size() - b);
    const auto pred = predict(net, stack(std::span<const Tensor>(images.data() + b, n)));
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == labels[b + i];
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

void verify_budget(const LabeledDataset& clean, const std::vector<Tensor>& perturbed, double eps) {
  if (clean.size() != perturbed.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adversarial count " + std::to_string(perturbed.size()) +
                                               " != clean count " + std::to_string(clean.size()));
  }
  const double bound = eps + 1e-6;
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    require_same_shape(clean.images[i], perturbed[i], "verify_budget");
    const auto& z = perturbed[i].vec();
    const double dist = linf_distance(perturbed[i], clean.images[i]);
    if (!perturbed[i].all_finite() || dist > bound || z.minCoeff() < 0.0f || z.maxCoeff() > 1.0f) {
      throw Error(ErrorCode::kBudgetViolation,
                  "sample " + std::to_string(i) + ": linf distance " + std::to_string(dist) +
                      " (bound " + std::to_string(bound) + "), range [" +
                      std::to_string(z.minCoeff()) + ", " + std::to_string(z.maxCoeff()) + "]");
    }
  }
}

// ---------------------------------------------------------------------------

void save_adversarial_cache(const fs::path& path, const LabeledDataset& clean,
                            const std::vector<Tensor>& perturbed, const json& manifest) {
  if (clean.size() != perturbed.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adversarial cache: count mismatch");
  }
  container::ByteWriter w;
  w.header(2);
  container::write_dataset_record(w, clean);
  w.u8(static_cast<std::uint8_t>(container::RecordTag::kTensorList));
  w.u32(static_cast<std::uint32_t>(perturbed.size()));
  for (const auto& t : perturbed) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.f32s(t.values());
  }
  container::write_file(path, w.bytes());
  const std::string text = manifest.dump(2) + "\n";
  container::write_file(fs::path(path.string() + ".json"),
                        std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json load_adversarial_cache(const fs::path& path, LabeledDataset& clean,
                            std::vector<Tensor>& perturbed) {
  const auto bytes = container::read_file(path);
  container::ByteReader r(bytes);
  if (r.header() != 2) throw Error(ErrorCode::kFormat, path.string() + ": expected two records");
  clean = container::read_dataset_record(r);
  const std::size_t at = r.offset();
  if (r.u8() != static_cast<std::uint8_t>(container::RecordTag::kTensorList)) {
    throw Error(ErrorCode::kFormat,
                path.string() + ": expected tensor list at offset " + std::to_string(at));
  }
  const std::size_t count = r.u32();
  perturbed.clear();
  perturbed.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) {
      throw Error(ErrorCode::kFormat, path.string() + ": bad tensor rank at offset " +
                                          std::to_string(r.offset() - 4));
    }
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    std::vector<float> buf(checked_numel(shape));
    r.f32s(buf);
    perturbed.emplace_back(std::move(shape), std::span<const float>(buf));
  }
  if (!r.at_end()) throw Error(ErrorCode::kFormat, path.string() + ": trailing bytes");

  const auto side = container::read_file(fs::path(path.string() + ".json"));
  try {
    return json::parse(side.begin(), side.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kFormat, path.string() + ".json: " + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

json attack_json(const AttackSpec& s) {
  return json{{"method", to_string(s.method)}, {"epsilon", s.epsilon},
              {"alpha", s.alpha},            {"iterations", s.iterations},
              {"random_start", s.random_start}, {"overshoot", s.overshoot},
              {"seed", s.seed}};
}

json defense_json(const DefenseSpec& s) {
  return json{{"method", to_string(s.method)}, {"quality", s.quality},
              {"lambda", s.lambda},          {"iterations", s.iterations},
              {"step", s.step},              {"dropout_rate", s.dropout_rate},
              {"seed", s.seed}};
}

json train_json(const TrainConfig& t) {
  json j{{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"seed", t.seed}};
  if (const auto* a = std::get_if<AdamConfig>(&t.optimizer)) {
    j["optimizer"] = json{{"adam", {a->lr, a->beta1, a->beta2, a->eps}}};
  } else {
    const auto& s = std::get<SgdMomentumConfig>(t.optimizer);
    j["optimizer"] = json{{"sgd", {s.lr, s.momentum, s.weight_decay}}};
  }
  if (t.lr_schedule) {
    j["plateau"] = {t.lr_schedule->factor, t.lr_schedule->patience, t.lr_schedule->threshold};
  }
  return j;
}

json record_json(const ResultRecord& r) {
  json j{{"dataset", r.dataset},
         {"property_kind", r.property_kind},
         {"property_factor", r.property_factor},
         {"attack", r.attack},
         {"epsilon", r.epsilon},
         {"defense", r.defense},
         {"defense_param", r.defense_param},
         {"clean_acc", r.clean_acc},
         {"adv_acc", r.adv_acc},
         {"n_samples", r.n_samples},
         {"seed", r.seed},
         {"model_id", r.model_id}};
  if (r.defended_acc) j["defended_acc"] = *r.defended_acc;
  return j;
}

ResultRecord record_from_json(const json& j) {
  ResultRecord r;
  r.dataset = j.at("dataset");
  r.property_kind = j.at("property_kind");
  r.property_factor = j.at("property_factor");
  r.attack = j.at("attack");
  r.epsilon = j.at("epsilon");
  r.defense = j.at("defense");
  r.defense_param = j.at("defense_param");
  r.clean_acc = j.at("clean_acc");
  r.adv_acc = j.at("adv_acc");
  r.n_samples = j.at("n_samples");
  r.seed = j.at("seed");
  r.model_id = j.at("model_id");
  if (j.contains("defended_acc")) r.defended_acc = j.at("defended_acc").get<double>();
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  container::write_file(path,
                        std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Single writer of manifest.json: completed record keys -> records.
class Manifest {
 public:
  explicit Manifest(fs::path path) : path_(std::move(path)) {
    if (!fs::exists(path_)) return;
    const auto bytes = container::read_file(path_);
    try {
      const json j = json::parse(bytes.begin(), bytes.end());
      for (const auto& [key, rec] : j.at("records").items()) records_[key] = record_from_json(rec);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormat, path_.string() + ": " + e.what());
    }
  }

  const ResultRecord* find(const std::string& key) const {
    const auto it = records_.find(key);
    return it == records_.end() ? nullptr : &it->second;
  }

  void put(const std::string& key, const ResultRecord& r) { records_[key] = r; }

  void flush() const {
    json recs = json::object();
    for (const auto& [key, r] : records_) recs[key] = record_json(r);
    write_text(path_, json{{"records", recs}}.dump(1) + "\n");
  }

 private:
  fs::path path_;
  std::map<std::string, ResultRecord> records_;
};

}  // namespace

fs::path model_cache_path(const ExperimentConfig& cfg, const PropertySetting& prop) {
  const json key{{"dataset", cfg.dataset.spec()},
                 {"validation_count", cfg.dataset.validation_count},
                 {"num_classes", cfg.dataset.num_classes},
                 // size1 and contrast1 are the same data and share a model
                 {"property", prop.factor == 1.0 ? "identity" : prop.label()},
                 {"architecture", to_string(cfg.architecture)},
                 {"train", train_json(cfg.train)}};
  return cfg.output_dir / "models" / (fnv1a_hex(key.dump()) + ".advb");
}

PreparedModel prepare_model(const ExperimentConfig& cfg, const PropertySetting& prop,
                            const LabeledDataset& train_set, const LabeledDataset& val_set,
                            const ProgressFn& progress) {
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  const fs::path path = model_cache_path(cfg, prop);
  const fs::path sidecar = fs::path(path.string() + ".json");
  if (fs::exists(path)) {
    say("reusing model " + path.string());
    PreparedModel m{load_model(path), path, false, 0.0, {}};
    if (fs::exists(sidecar)) {
      const auto bytes = container::read_file(sidecar);
      const json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
      if (j.is_object()) m.train_seconds = j.value("train_seconds", 0.0);
    }
    return m;
  }
  say("training " + cfg.dataset.name + "/" + prop.label());
  fs::create_directories(path.parent_path());
  Network init = build_network(cfg.architecture, train_set.image_shape(), cfg.dataset.num_classes,
                               cfg.train.seed);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(std::move(init), train_set, val_set, cfg.train, [&](const EpochMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  epoch %zu train_loss %.4f val_loss %.4f val_acc %.4f lr %g",
                  m.epoch, m.train_loss, m.val_loss, m.val_accuracy, m.learning_rate);
    say(buf);
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_model(r.net, path);
  json history = json::array();
  for (const auto& m : r.history) {
    history.push_back({{"epoch", m.epoch},
                       {"train_loss", m.train_loss},
                       {"val_loss", m.val_loss},
                       {"val_accuracy", m.val_accuracy},
                       {"learning_rate", m.learning_rate}});
  }
  write_text(sidecar, json{{"train_seconds", seconds}, {"history", history}}.dump(1) + "\n");
  return {std::move(r.net), path, true, seconds, std::move(r.history)};
}

MatrixResult run_matrix(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  const std::size_t workers = worker_count();
  const fs::path out = cfg.output_dir;
  fs::create_directories(out / "models");
  fs::create_directories(out / "adv");

  Manifest manifest(out / "manifest.json");
  MatrixResult result;
  std::vector<std::string> keys;  // record keys of this config, in generation order
  auto emit = [&](const std::string& key, const ResultRecord& r, bool reused) {
    if (!reused) manifest.put(key, r);
    keys.push_back(key);
  };
  auto fail = [&](const std::string& cell, const Error& e) {
    result.errors.push_back({cell, std::string(to_string(e.code())), e.what()});
    say("cell " + cell + " failed: " + e.line());
  };

  say("loading " + cfg.dataset.spec());
  const LoadedData data = load_source(cfg.dataset);

  for (const PropertySetting& prop : cfg.property_axis) {
    const std::string prop_cell = cfg.dataset.name + "/" + prop.label();
    std::optional<Network> net;
    LabeledDataset eval;
    std::string model_id;
    double clean_acc = 0;
    try {
      const bool cached = fs::exists(model_cache_path(cfg, prop));
      const LabeledDataset train_set = cached ? LabeledDataset{} : apply_property(prop, data.train);
      const LabeledDataset val_set = cached ? LabeledDataset{} : apply_property(prop, data.validation);
      const LabeledDataset test_set = apply_property(prop, data.test);
      if (cfg.eval_samples > test_set.size()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "eval_samples " + std::to_string(cfg.eval_samples) + " exceeds test size " +
                        std::to_string(test_set.size()));
      }
      eval = take_prefix(test_set, cfg.eval_samples);

      const PreparedModel prepared = prepare_model(cfg, prop, train_set, val_set, progress);
      net.emplace(prepared.net);
      const fs::path& model_path = prepared.path;
      model_id = fnv1a_hex(container::read_file(model_path));
      clean_acc = accuracy_on(*net, eval.images, eval.labels);
    } catch (const Error& e) {
      fail(prop_cell, e);
      continue;
    }

    auto base_record = [&] {
      ResultRecord r;
      r.dataset = cfg.dataset.name;
      r.property_kind = prop.kind_name();
      r.property_factor = prop.factor;
      r.clean_acc = clean_acc;
      r.n_samples = eval.size();
      r.seed = cfg.seed;
      r.model_id = model_id;
      return r;
    };
    const std::string model_scope = model_id + "|n=" + std::to_string(eval.size()) +
                                    "|seed=" + std::to_string(cfg.seed);

    // defense(clean) rows
    for (const DefenseSpec& def : cfg.defenses) {
      if (def.method == DefenseMethod::kNone) continue;
      const std::string key = fnv1a_hex(model_scope + "|clean|" + defense_json(def).dump());
      if (const ResultRecord* done = manifest.find(key)) {
        emit(key, *done, true);
        ++result.cells_reused;
        continue;
      }
      const std::string cell = prop_cell + "/none/" + to_string(def.method);
      try {
        const auto defended = apply_defense_all(def, eval.images, workers);
        ResultRecord r = base_record();
        r.attack = "none";
        r.epsilon = 0;
        r.defense = to_string(def.method);
        r.defense_param = def.param_string();
        r.adv_acc = clean_acc;
        r.defended_acc = accuracy_on(*net, defended, eval.labels);
        emit(key, r, false);
        ++result.cells_computed;
      } catch (const Error& e) {
        fail(cell, e);
      }
    }
    manifest.flush();

    for (const AttackSpec& base : cfg.attacks) {
      for (double eps : cfg.epsilons) {
        char eps_text[32];
        std::snprintf(eps_text, sizeof eps_text, "%.9g", eps);
        const std::string cell = prop_cell + "/" + to_string(base.method) + "/" + eps_text;
        try {
          const AttackSpec spec = cell_attack_spec(cfg, base, eps);
          const json attack_desc = attack_json(spec);
          const std::string attack_key = fnv1a_hex(model_scope + "|" + attack_desc.dump());

          std::vector<std::string> def_keys;
          bool all_done = true;
          for (const DefenseSpec& def : cfg.defenses) {
            def_keys.push_back(fnv1a_hex(attack_key + "|" + defense_json(def).dump()));
            all_done = all_done && manifest.find(def_keys.back()) != nullptr;
          }
          if (all_done) {
            for (const auto& k : def_keys) emit(k, *manifest.find(k), true);
            ++result.cells_reused;
            continue;
          }

          const fs::path adv_path = out / "adv" / (attack_key + ".advb");
          const json adv_manifest{{"model_hash", model_id},
                                  {"attack", attack_desc},
                                  {"seed", cfg.seed},
                                  {"n_samples", eval.size()}};
          std::vector<Tensor> adv;
          bool cached = false;
          if (fs::exists(adv_path) && fs::exists(adv_path.string() + ".json")) {
            LabeledDataset cached_clean;
            const json m = load_adversarial_cache(adv_path, cached_clean, adv);
            cached = m == adv_manifest && cached_clean.images == eval.images &&
                     cached_clean.labels == eval.labels;
          }
          if (!cached) {
            say("attacking " + cell);
            adv = craft_adversarials(*net, eval, spec, workers);
            save_adversarial_cache(adv_path, eval, adv, adv_manifest);
          }
          verify_budget(eval, adv, spec.epsilon);
          const double adv_acc = accuracy_on(*net, adv, eval.labels);

          for (std::size_t d = 0; d < cfg.defenses.size(); ++d) {
            if (const ResultRecord* done = manifest.find(def_keys[d])) {
              emit(def_keys[d], *done, true);
              continue;
            }
            const DefenseSpec& def = cfg.defenses[d];
            ResultRecord r = base_record();
            r.attack = to_string(spec.method);
            r.epsilon = eps;
            r.defense = to_string(def.method);
            r.defense_param = def.param_string();
            r.adv_acc = adv_acc;
            if (def.method != DefenseMethod::kNone) {
              r.defended_acc = accuracy_on(*net, apply_defense_all(def, adv, workers), eval.labels);
            }
            emit(def_keys[d], r, false);
          }
          ++result.cells_computed;
        } catch (const Error& e) {
          fail(cell, e);
        }
        manifest.flush();
      }
    }
  }

  for (const auto& k : keys) result.records.push_back(*manifest.find(k));
  sort_records(result.records);
  result.csv_path = out / "results.csv";
  write_text(result.csv_path, format_csv(result.records));

  json errs = json::array();
  for (const auto& e : result.errors) {
    errs.push_back({{"cell", e.cell}, {"code", e.code}, {"message", e.message}});
  }
  write_text(out / "errors.json", errs.dump(2) + "\n");
  return result;
}

}  // namespace advbench
