#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "advbench/harness.hpp"
#include "doctest.h"

using namespace advbench;
using nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "advbench_test_harness" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json tiny_config(const std::filesystem::path& out) {
  return {{"dataset", "synth:seed=3,train=20,test=6,classes=4,h=12,w=12"},
          {"architecture", "tiny_cnn"},
          {"attacks", {"fgsm"}},
          {"defenses", {"none"}},
          {"epsilons", {"8/255"}},
          {"train", {{"epochs", 1}, {"batch_size", 16}}},
          {"eval_samples", 12},
          {"seed", 5},
          {"output_dir", out.string()}};
}

json preset_config(const std::filesystem::path& out) {
  json j = tiny_config(out);
  j["attacks"] = {"fgsm", "bim", json{{"method", "pgd"}, {"random_start", true}}, "deepfool"};
  j["defenses"] = {"none", json{{"method", "jpeg"}, {"quality", 75}},
                   json{{"method", "tvm"}, {"lambda", 0.03}, {"iterations", 30}}};
  j["epsilons"] = {"2/255", "4/255", "8/255", "16/255"};
  return j;
}

ResultRecord record(const std::string& attack, double eps, const std::string& defense, double acc,
                    double factor = 1.0) {
  ResultRecord r;
  r.dataset = "synth";
  r.property_kind = "size";
  r.property_factor = factor;
  r.attack = attack;
  r.epsilon = eps;
  r.defense = defense;
  r.defense_param = defense == "jpeg" ? "q=75" : defense == "tvm" ? "lambda=0.03" : "";
  r.clean_acc = 0.9;
  r.adv_acc = acc;
  if (defense != "none") r.defended_acc = acc / 2;
  r.n_samples = 100;
  r.seed = 1;
  r.model_id = "abc";
  return r;
}

std::vector<ResultRecord> preset_records() {
  std::vector<ResultRecord> out;
  double acc = 0.01;
  for (double factor : {0.5, 1.0, 2.0}) {
    for (const char* a : {"fgsm", "bim", "pgd", "deepfool"}) {
      for (double eps : {2 / 255.0, 4 / 255.0, 8 / 255.0, 16 / 255.0}) {
        for (const char* d : {"none", "jpeg", "tvm"}) {
          out.push_back(record(a, eps, d, acc, factor));
          acc = std::fmod(acc + 0.0137, 1.0);
        }
      }
    }
  }
  return out;
}

// Equal up to the CSV's printed precision.
bool same_record(const ResultRecord& a, const ResultRecord& b) {
  auto near = [](double x, double y) { return std::abs(x - y) <= 1e-6; };
  return a.dataset == b.dataset && a.property_kind == b.property_kind &&
         near(a.property_factor, b.property_factor) && a.attack == b.attack && near(a.epsilon, b.epsilon) &&
         a.defense == b.defense && a.defense_param == b.defense_param && near(a.clean_acc, b.clean_acc) &&
         near(a.adv_acc, b.adv_acc) && a.defended_acc.has_value() == b.defended_acc.has_value() &&
         (!a.defended_acc || near(*a.defended_acc, *b.defended_acc)) && a.n_samples == b.n_samples &&
         a.seed == b.seed && a.model_id == b.model_id;
}

bool same_records(const std::vector<ResultRecord>& a, const std::vector<ResultRecord>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), same_record);
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("fractions parse exactly") {
  CHECK(parse_fraction("8/255") == 8.0 / 255.0);
  CHECK(parse_fraction("0.03") == 0.03);
  CHECK(parse_fraction("1e-3") == 1e-3);
  CHECK(static_cast<float>(parse_fraction("16/255")) == 16.0f / 255.0f);
  for (const char* bad : {"", "8/", "/255", "8/0", "abc", "1/2/3", "nan"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_fraction(bad), Error);
  }
  CHECK(fraction_from_json(json(0.5), "x") == 0.5);
  CHECK(fraction_from_json(json("1/4"), "x") == 0.25);
  CHECK_THROWS_AS(fraction_from_json(json(true), "x"), Error);
}

TEST_CASE("config parsing") {
  const auto cfg = ExperimentConfig::from_json(preset_config("out"));
  CHECK(cfg.attacks.size() == 4);
  CHECK(cfg.attacks[2].random_start);
  CHECK(cfg.defenses[1].quality == 75);
  CHECK(cfg.defenses[2].iterations == 30);
  CHECK(cfg.epsilons[3] == 16.0 / 255.0);
  CHECK(cfg.architecture == Architecture::kTinyCnn);
  CHECK(cfg.train.seed == 5);
  CHECK(cfg.dataset.kind == DatasetSource::Kind::kSynthetic);
  CHECK(cfg.dataset.num_classes == 4);

  json unknown = tiny_config("out");
  unknown["epsilon"] = {"8/255"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(unknown), Error);
  json nested = tiny_config("out");
  nested["train"]["learning_rate"] = 0.1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(nested), Error);
  json bad_eps = tiny_config("out");
  bad_eps["epsilons"] = {"0"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_eps), Error);
  json bad_attack = tiny_config("out");
  bad_attack["attacks"] = {"cw"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad_attack), Error);
}

TEST_CASE("dataset source specs round-trip") {
  const auto s = DatasetSource::parse("synth:seed=3,train=20,test=6,classes=4,h=12,w=12");
  CHECK(DatasetSource::parse(s.spec()).spec() == s.spec());
  CHECK(s.synth_train_per_class == 20);
  CHECK_THROWS_AS(DatasetSource::parse("ftp:thing"), Error);
  CHECK_THROWS_AS(DatasetSource::parse("synth:size=3"), Error);
  CHECK_THROWS_AS(DatasetSource::parse("idx:a,b,c"), Error);
}

TEST_CASE("cell attack spec uses the preset step") {
  auto cfg = ExperimentConfig::from_json(preset_config("out"));
  const AttackSpec s = cell_attack_spec(cfg, cfg.attacks[1], 8.0 / 255.0);
  CHECK(s.epsilon == 8.0f / 255.0f);
  CHECK(s.alpha == doctest::Approx(2.0f / 255.0f));
  CHECK(s.iterations == 10);
  cfg.alpha_over_eps = 0.5;
  CHECK(cell_attack_spec(cfg, cfg.attacks[1], 8.0 / 255.0).alpha == doctest::Approx(4.0f / 255.0f));
}

TEST_CASE("one attack, one defense, one epsilon gives exactly one record") {
  const auto out = fresh_dir("single");
  const auto result = run_matrix(ExperimentConfig::from_json(tiny_config(out)));
  CHECK(result.errors.empty());
  REQUIRE(result.records.size() == 1);
  const ResultRecord& r = result.records[0];
  CHECK(r.attack == "fgsm");
  CHECK(r.defense == "none");
  CHECK(!r.defended_acc);
  CHECK(r.n_samples == 12);
  CHECK(r.adv_acc <= 1.0);
  CHECK(same_records(read_csv(out / "results.csv"), result.records));
}

TEST_CASE("paper preset fills 48 attacked cells, reruns reuse them bitwise") {
  const auto out = fresh_dir("preset");
  const auto cfg = ExperimentConfig::from_json(preset_config(out));
  const auto first = run_matrix(cfg);
  CHECK(first.errors.empty());
  const auto attacked = std::count_if(first.records.begin(), first.records.end(),
                                      [](const ResultRecord& r) { return r.attack != "none"; });
  CHECK(attacked == 48);
  for (const auto& r : first.records) {
    CHECK(r.defended_acc.has_value() == (r.defense != "none"));
    if (r.attack == "none") CHECK(r.epsilon == 0.0);
  }
  const std::string csv = slurp(out / "results.csv");
  CHECK(csv.rfind(std::string(kCsvHeader) + "\n", 0) == 0);

  const auto second = run_matrix(cfg);
  CHECK(second.cells_computed == 0);
  CHECK(second.cells_reused > 0);
  CHECK(slurp(out / "results.csv") == csv);

  const auto other = fresh_dir("preset-again");
  json again = preset_config(other);
  (void)run_matrix(ExperimentConfig::from_json(again));
  CHECK(slurp(other / "results.csv") == csv);
}

TEST_CASE("worker count does not change results") {
  const auto a = fresh_dir("w1"), b = fresh_dir("w3");
  json ja = tiny_config(a), jb = tiny_config(b);
  for (json* j : {&ja, &jb}) {
    (*j)["attacks"] = {"bim", json{{"method", "pgd"}, {"random_start", true}}, "deepfool"};
    (*j)["defenses"] = {"none", json{{"method", "tvm"}, {"iterations", 20}}};
  }
  ::setenv("ADVBENCH_WORKERS", "1", 1);
  (void)run_matrix(ExperimentConfig::from_json(ja));
  ::setenv("ADVBENCH_WORKERS", "3", 1);
  (void)run_matrix(ExperimentConfig::from_json(jb));
  ::unsetenv("ADVBENCH_WORKERS");
  CHECK(slurp(a / "results.csv") == slurp(b / "results.csv"));
}

TEST_CASE("parallel_for visits every index once and rethrows the lowest failure") {
  std::vector<std::atomic<int>> hits(101);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](const auto& h) { return h.load() == 1; }));
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 30) throw Error(ErrorCode::kInvalidArgument, "index " + std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "index 7");
  }
}

TEST_CASE("budget verification catches violations") {
  LabeledDataset clean{"c", 2, {Tensor({1, 2, 2}, 0.5f), Tensor({1, 2, 2}, 0.5f)}, {0, 1}};
  std::vector<Tensor> ok{Tensor({1, 2, 2}, 0.5f + 0.001f), Tensor({1, 2, 2}, 0.5f - 0.001f)};
  CHECK_NOTHROW(verify_budget(clean, ok, 0.001));
  std::vector<Tensor> bad = ok;
  bad[1][3] = 0.6f;
  try {
    verify_budget(clean, bad, 0.001);
    FAIL("expected a budget violation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBudgetViolation);
    CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
  }
}

TEST_CASE("adversarial cache round-trips") {
  const auto dir = fresh_dir("advcache");
  LabeledDataset clean{"c", 3, {Tensor({1, 2, 3}, 0.25f), Tensor({1, 2, 3}, 0.75f)}, {2, 0}};
  std::vector<Tensor> adv{Tensor({1, 2, 3}, 0.3f), Tensor({1, 2, 3}, 0.7f)};
  const json manifest{{"model_hash", "f00"}, {"seed", 4}};
  save_adversarial_cache(dir / "x.advb", clean, adv, manifest);
  LabeledDataset c2;
  std::vector<Tensor> a2;
  CHECK(load_adversarial_cache(dir / "x.advb", c2, a2) == manifest);
  CHECK(c2.labels == clean.labels);
  CHECK(c2.images == clean.images);
  CHECK(a2 == adv);
}

TEST_CASE("markdown of no records is the header alone") {
  const std::string md = render_markdown({});
  CHECK(md == "| defense | property | epsilon |\n|---|---|---|\n");
}

TEST_CASE("markdown table layout") {
  const std::string md = render_markdown(preset_records());
  CHECK(md.rfind("| defense | property | epsilon | bim | deepfool | fgsm | pgd |\n", 0) == 0);
  // 3 defenses x 3 properties x 4 epsilons, plus header and rule
  CHECK(std::count(md.begin(), md.end(), '\n') == 36 + 2);
  CHECK(md.find("| jpeg (q=75) | size0.5 | 16/255 |") != std::string::npos);
}

TEST_CASE("plot data has 12 panels of 3 series by 4 points") {
  const auto records = preset_records();
  const json plot = json::parse(render_plot_data(records));
  REQUIRE(plot["panels"].size() == 12);
  std::vector<double> from_plot;
  for (const auto& panel : plot["panels"]) {
    REQUIRE(panel["series"].size() == 3);
    for (const auto& s : panel["series"]) {
      REQUIRE(s["points"].size() == 4);
      for (const auto& p : s["points"]) from_plot.push_back(p[1].get<double>());
    }
  }
  std::vector<double> from_records;
  for (const auto& r : records) from_records.push_back(reported_accuracy(r));
  std::sort(from_plot.begin(), from_plot.end());
  std::sort(from_records.begin(), from_records.end());
  CHECK(from_plot == from_records);
  CHECK(plot["baselines"].empty());
}

TEST_CASE("csv round-trips and rejects malformed rows") {
  auto records = preset_records();
  records.push_back(record("none", 0.0, "tvm", 0.8));
  sort_records(records);
  const std::string csv = format_csv(records);
  CHECK(same_records(parse_csv(csv), records));
  CHECK(format_csv(parse_csv(csv)) == csv);

  const std::string head = std::string(kCsvHeader) + "\n";
  auto row_error = [&](const std::string& body) -> std::string {
    try {
      parse_csv(head + body);
    } catch (const Error& e) {
      return e.what();
    }
    return "";
  };
  CHECK(row_error("synth,size,1,fgsm,0.1,none,,0.9,0.5,,10,1,m\nsynth,size,1,fgsm\n").find("CSV row 3") !=
        std::string::npos);
  CHECK(row_error("synth,size,1,fgsm,0.1,none,,0.9,1.5,,10,1,m\n").find("CSV row 2") != std::string::npos);
  CHECK(row_error("synth,size,1,fgsm,0.1,jpeg,q=75,0.9,0.5,,10,1,m\n").find("defended_acc") != std::string::npos);
  CHECK(row_error("synth,size,x,fgsm,0.1,none,,0.9,0.5,,10,1,m\n").find("property_factor") != std::string::npos);
  CHECK_THROWS_AS(parse_csv("a,b\n"), Error);
}

TEST_CASE("fnv1a known values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

}
