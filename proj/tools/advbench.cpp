#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "advbench/container.hpp"
#include "advbench/harness.hpp"

using namespace advbench;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void log_line(const std::string& s) { std::cerr << s << "\n"; }

void require_file(const fs::path& p, const char* flag) {
  if (!fs::exists(p)) throw Error(ErrorCode::kUsage, std::string(flag) + ": no such file " + p.string());
}

int cmd_train(const fs::path& config_path, const fs::path& out) {
  require_file(config_path, "--config");
  const ExperimentConfig cfg = ExperimentConfig::load(config_path);
  const LoadedData data = load_source(cfg.dataset);
  const PropertySetting& prop = cfg.property_axis.front();
  if (cfg.property_axis.size() > 1) log_line("note: training on the first property setting " + prop.label());
  const LabeledDataset train_set = apply_property(prop, data.train);
  const LabeledDataset val_set = apply_property(prop, data.validation);
  Network init = build_network(cfg.architecture, train_set.image_shape(), cfg.dataset.num_classes,
                               cfg.train.seed);
  const TrainResult result = train(std::move(init), train_set, val_set, cfg.train, [](const EpochMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu train_loss %.4f val_loss %.4f val_acc %.4f lr %g", m.epoch,
                  m.train_loss, m.val_loss, m.val_accuracy, m.learning_rate);
    log_line(buf);
  });
  save_model(result.net, out);
  std::cout << "model " << out.string() << " id " << fnv1a_hex(container::read_file(out)) << "\n";
  return 0;
}

struct AttackArgs {
  fs::path model, out;
  std::string dataset, method, eps;
  std::string alpha;
  std::size_t iters = 0;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
};

int cmd_attack(const AttackArgs& a) {
  require_file(a.model, "--model");
  const Network net = load_model(a.model);
  LabeledDataset data = load_test_split(DatasetSource::parse(a.dataset));
  if (a.samples > 0) data = take_prefix(data, a.samples);
  const double eps = parse_fraction(a.eps);
  AttackSpec spec = AttackSpec::preset(parse_attack_method(a.method), static_cast<float>(eps), a.seed);
  if (!a.alpha.empty()) spec.alpha = static_cast<float>(parse_fraction(a.alpha));
  if (a.iters > 0) spec.iterations = a.iters;
  spec.random_start = spec.method == AttackMethod::kPgd;
  spec.validate();
  for (const auto& w : spec.warnings()) log_line("warning: " + w);

  const auto adv = craft_adversarials(net, data, spec, worker_count());
  verify_budget(data, adv, spec.epsilon);
  const json manifest{{"model_hash", fnv1a_hex(container::read_file(a.model))},
                      {"attack",
                       {{"method", to_string(spec.method)},
                        {"epsilon", spec.epsilon},
                        {"alpha", spec.alpha},
                        {"iterations", spec.iterations},
                        {"random_start", spec.random_start},
                        {"overshoot", spec.overshoot},
                        {"seed", spec.seed}}},
                      {"seed", a.seed},
                      {"n_samples", data.size()},
                      {"dataset", a.dataset}};
  save_adversarial_cache(a.out, data, adv, manifest);
  std::printf("clean_acc %.6f adv_acc %.6f n %zu budget ok\n", accuracy_on(net, data.images, data.labels),
              accuracy_on(net, adv, data.labels), data.size());
  return 0;
}

int cmd_verify(const fs::path& input) {
  require_file(input, "--input");
  LabeledDataset clean;
  std::vector<Tensor> adv;
  const json m = load_adversarial_cache(input, clean, adv);
  if (m.contains("defense")) {
    throw Error(ErrorCode::kInvalidArgument, input.string() + " holds defended images, not an attack cache");
  }
  const double eps = m.at("attack").at("epsilon").get<double>();
  verify_budget(clean, adv, eps);
  std::printf("budget ok n %zu eps %.9g\n", adv.size(), eps);
  return 0;
}

struct DefendArgs {
  fs::path input, out;
  std::string method;
  int quality = 75;
  std::string lambda = "0.03";
  std::size_t iters = 200;
};

int cmd_defend(const DefendArgs& a) {
  require_file(a.input, "--input");
  DefenseSpec spec;
  spec.method = parse_defense_method(a.method);
  spec.quality = a.quality;
  spec.lambda = static_cast<float>(parse_fraction(a.lambda));
  spec.iterations = a.iters;
  spec.validate();
  LabeledDataset clean;
  std::vector<Tensor> adv;
  json m = load_adversarial_cache(a.input, clean, adv);
  const auto defended = apply_defense_all(spec, adv, worker_count());
  m["defense"] = {{"method", to_string(spec.method)}, {"param", spec.param_string()},
                  {"iterations", spec.iterations}};
  save_adversarial_cache(a.out, clean, defended, m);
  std::printf("defended %zu samples with %s %s\n", defended.size(), to_string(spec.method).c_str(),
              spec.param_string().c_str());
  return 0;
}

int cmd_matrix(const fs::path& config_path, const std::string& out_dir) {
  require_file(config_path, "--config");
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  const MatrixResult r = run_matrix(cfg, log_line);
  std::printf("records %zu computed %zu reused %zu errors %zu csv %s\n", r.records.size(),
              r.cells_computed, r.cells_reused, r.errors.size(), r.csv_path.string().c_str());
  return r.errors.empty() ? 0 : 3;
}

int cmd_report(const fs::path& csv, const std::string& format) {
  require_file(csv, "--csv");
  const auto records = read_csv(csv);
  std::cout << (format == "md" ? render_markdown(records) : render_plot_data(records));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness benchmark"};
  app.require_subcommand(1);

  fs::path train_config, train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model from an experiment config");
  train_cmd->add_option("--config", train_config)->required();
  train_cmd->add_option("--out", train_out)->required();

  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "Craft adversarial examples into a cache");
  attack_cmd->add_option("--model", attack.model)->required();
  attack_cmd->add_option("--dataset", attack.dataset, "idx:<dir>, synth:..., cache:<train>,<test>")->required();
  attack_cmd->add_option("--method", attack.method)
      ->required()
      ->check(CLI::IsMember({"fgsm", "bim", "pgd", "deepfool"}));
  attack_cmd->add_option("--eps", attack.eps, "Budget, e.g. 8/255")->required();
  attack_cmd->add_option("--alpha", attack.alpha, "Step size (default eps/4)");
  attack_cmd->add_option("--iters", attack.iters);
  attack_cmd->add_option("--seed", attack.seed);
  attack_cmd->add_option("--samples", attack.samples, "Use the first N test samples");
  attack_cmd->add_option("--out", attack.out)->required();

  fs::path verify_input;
  auto* verify_cmd = app.add_subcommand("verify", "Re-check the budget of an attack cache");
  verify_cmd->add_option("--input", verify_input)->required();

  DefendArgs defend;
  auto* defend_cmd = app.add_subcommand("defend", "Apply an input-transformation defense to a cache");
  defend_cmd->add_option("--input", defend.input)->required();
  defend_cmd->add_option("--method", defend.method)->required()->check(CLI::IsMember({"jpeg", "tvm", "none"}));
  defend_cmd->add_option("--quality", defend.quality);
  defend_cmd->add_option("--lambda", defend.lambda);
  defend_cmd->add_option("--iters", defend.iters);
  defend_cmd->add_option("--out", defend.out)->required();

  fs::path matrix_config;
  std::string matrix_out;
  auto* matrix_cmd = app.add_subcommand("matrix", "Run the attack x defense x epsilon grid");
  matrix_cmd->add_option("--config", matrix_config)->required();
  matrix_cmd->add_option("--out-dir", matrix_out);

  fs::path report_csv;
  std::string report_format = "md";
  auto* report_cmd = app.add_subcommand("report", "Render a results CSV");
  report_cmd->add_option("--csv", report_csv)->required();
  report_cmd->add_option("--format", report_format)->check(CLI::IsMember({"md", "plotdata"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error code=usage message=" << msg << "\n";
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_config, train_out);
    if (*attack_cmd) return cmd_attack(attack);
    if (*verify_cmd) return cmd_verify(verify_input);
    if (*defend_cmd) return cmd_defend(defend);
    if (*matrix_cmd) return cmd_matrix(matrix_config, matrix_out);
    if (*report_cmd) return cmd_report(report_csv, report_format);
  } catch (const Error& e) {
    std::cerr << e.line() << "\n";
    return e.code() == ErrorCode::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << Error(ErrorCode::kIo, e.what()).line() << "\n";
    return 1;
  }
  return 2;
}
