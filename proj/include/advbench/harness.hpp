#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "advbench/attacks.hpp"
#include "advbench/dataset.hpp"
#include "advbench/datasets.hpp"
#include "advbench/defenses.hpp"
#include "advbench/nn.hpp"
#include "advbench/train.hpp"

namespace advbench {

// "8/255", "0.03", "1e-3" -> value. Fractions are divided in double and
// rounded once to float.
double parse_fraction(const std::string& text);
// Accepts a JSON number or a fraction string.
double fraction_from_json(const nlohmann::json& value, const std::string& field);

// Where train/test data come from.
//   idx:<train-images>,<train-labels>,<test-images>,<test-labels>
//   synth:seed=1,train=200,test=50,classes=10,h=28,w=28   (per-class counts)
//   cache:<train-cache>,<test-cache>
struct DatasetSource {
  enum class Kind { kIdx, kSynthetic, kCache };

  Kind kind = Kind::kSynthetic;
  std::string name = "synth";
  std::vector<std::filesystem::path> paths;
  std::size_t num_classes = 10;
  std::uint64_t synth_seed = 1;
  std::size_t synth_train_per_class = 100;
  std::size_t synth_test_per_class = 20;
  std::size_t synth_h = 28;
  std::size_t synth_w = 28;
  // Trailing training samples held out for validation.
  std::size_t validation_count = 0;

  static DatasetSource parse(const std::string& spec);
  // Canonical spec string; identifies the source in cache keys.
  std::string spec() const;
};

struct LoadedData {
  LabeledDataset train;
  LabeledDataset validation;
  LabeledDataset test;
};

// Loads and splits; validation falls back to the test set when the source
// holds out nothing.
LoadedData load_source(const DatasetSource& source);
// Test split only (attack/defend subcommands).
LabeledDataset load_test_split(const DatasetSource& source);

enum class Architecture { kPaperCnn, kTinyCnn };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);
// Conv(8, 3x3, pad 1) -> ReLU -> MaxPool(2) -> Flatten -> Dense(classes).
std::vector<LayerSpec> tiny_cnn_layers(std::size_t num_classes);
Network build_network(Architecture arch, const Shape& sample_shape, std::size_t num_classes,
                      std::uint64_t seed);

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<PropertySetting> property_axis{PropertySetting::size_scale(1.0)};
  // epsilon/alpha inside each entry are ignored: epsilons come from the
  // list below and alpha is the preset eps/4 unless alpha_over_eps is set.
  std::vector<AttackSpec> attacks;
  std::vector<DefenseSpec> defenses{DefenseSpec::none()};
  std::vector<double> epsilons;
  std::optional<double> alpha_over_eps;
  TrainConfig train;
  Architecture architecture = Architecture::kPaperCnn;
  std::size_t eval_samples = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "advbench-out";

  void validate() const;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Attack spec actually used for one (attack, eps) cell.
AttackSpec cell_attack_spec(const ExperimentConfig& cfg, const AttackSpec& base, double eps);

using ProgressFn = std::function<void(const std::string&)>;

// Model cache file for one property setting under <output_dir>/models.
std::filesystem::path model_cache_path(const ExperimentConfig& cfg, const PropertySetting& prop);

struct PreparedModel {
  Network net;
  std::filesystem::path path;
  bool trained = false;        // false when reloaded from the cache
  double train_seconds = 0;    // wall time of the original training run
  std::vector<EpochMetrics> history;  // empty when reloaded
};

// Loads the cached model for this setting or trains and caches it (with a
// <model>.json sidecar holding the training time and history).
PreparedModel prepare_model(const ExperimentConfig& cfg, const PropertySetting& prop,
                            const LabeledDataset& train_set, const LabeledDataset& val_set,
                            const ProgressFn& progress = {});

struct ResultRecord {
  std::string dataset;
  std::string property_kind;
  double property_factor = 1.0;
  std::string attack;  // "none" for defense(clean) rows
  double epsilon = 0;
  std::string defense;
  std::string defense_param;
  double clean_acc = 0;
  double adv_acc = 0;
  std::optional<double> defended_acc;  // present iff defense != none
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::string model_id;

  bool operator==(const ResultRecord&) const = default;
};

struct CellError {
  std::string cell;
  std::string code;
  std::string message;
};

struct MatrixResult {
  std::vector<ResultRecord> records;
  std::vector<CellError> errors;
  std::filesystem::path csv_path;
  std::size_t cells_reused = 0;
  std::size_t cells_computed = 0;
};

// Worker count from ADVBENCH_WORKERS, else hardware concurrency (>= 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on `workers` threads. Any exception is
// rethrown after all workers stop (lowest index first).
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// Trains or reloads one model per property setting, then fills the
// attack x eps x defense grid. Writes <output_dir>/results.csv,
// manifest.json, errors.json, models/ and adv/.
MatrixResult run_matrix(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Stable sort by (property, attack, epsilon, defense).
void sort_records(std::vector<ResultRecord>& records);

extern const char* const kCsvHeader;
std::string format_csv(const std::vector<ResultRecord>& records);
std::vector<ResultRecord> parse_csv(const std::string& text);
std::vector<ResultRecord> read_csv(const std::filesystem::path& path);

// Accuracy a record contributes to reports: defended_acc when a defense
// ran, adv_acc otherwise.
double reported_accuracy(const ResultRecord& r);

// Single table; one row per (defense, property, epsilon), one column per
// attack.
std::string render_markdown(const std::vector<ResultRecord>& records);
// JSON: panels per (defense, attack), one series per property setting of
// (epsilon, accuracy) points; attack = "none" rows land in "baselines".
std::string render_plot_data(const std::vector<ResultRecord>& records);

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string fnv1a_hex(const std::string& text);

// Adversarial cache: container with a dataset record of the clean inputs
// and a tensor-list record of the perturbed ones, plus a JSON sidecar
// (<path>.json) holding model hash, attack spec, epsilon and seed.
void save_adversarial_cache(const std::filesystem::path& path, const LabeledDataset& clean,
                            const std::vector<Tensor>& perturbed, const nlohmann::json& manifest);
// Returns the manifest; fills clean/perturbed.
nlohmann::json load_adversarial_cache(const std::filesystem::path& path, LabeledDataset& clean,
                                      std::vector<Tensor>& perturbed);

// Throws kBudgetViolation naming the first offending sample when any
// |perturbed - clean| exceeds eps + 1e-6 or leaves [0, 1].
void verify_budget(const LabeledDataset& clean, const std::vector<Tensor>& perturbed, double eps);

// Crafts one adversarial example per sample on the worker pool.
std::vector<Tensor> craft_adversarials(const Network& net, const LabeledDataset& data,
                                       const AttackSpec& spec, std::size_t workers);

std::vector<Tensor> apply_defense_all(const DefenseSpec& spec, const std::vector<Tensor>& images,
                                      std::size_t workers);

// Fraction of images predicted as their label.
double accuracy_on(const Network& net, const std::vector<Tensor>& images,
                   const std::vector<int>& labels);

}  // namespace advbench
