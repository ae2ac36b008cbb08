#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "advbench/container.hpp"
#include "advbench/harness.hpp"

namespace advbench {

using nlohmann::ordered_json;

const char* const kCsvHeader =
    "dataset,property_kind,property_factor,attack,epsilon,defense,defense_param,clean_acc,adv_acc,"
    "defended_acc,n_samples,seed,model_id";

void sort_records(std::vector<ResultRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const ResultRecord& a, const ResultRecord& b) {
    return std::tie(a.property_kind, a.property_factor, a.attack, a.epsilon, a.defense) <
           std::tie(b.property_kind, b.property_factor, b.attack, b.epsilon, b.defense);
  });
}

double reported_accuracy(const ResultRecord& r) {
  return r.defended_acc ? *r.defended_acc : r.adv_acc;
}

namespace {

std::string real(double v, const char* fmt = "%.9g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw Error(ErrorCode::kFormat, std::string("CSV field ") + what + " holds a reserved character: '" + s + "'");
  }
}

[[noreturn]] void row_error(std::size_t row, const std::string& what) {
  throw Error(ErrorCode::kFormat, "CSV row " + std::to_string(row) + ": " + what);
}

double parse_double(const std::string& s, std::size_t row, const char* field) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    row_error(row, std::string(field) + " is not a number: '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s, std::size_t row, const char* field) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    row_error(row, std::string(field) + " is not an unsigned integer: '" + s + "'");
  }
  return v;
}

double parse_accuracy(const std::string& s, std::size_t row, const char* field) {
  const double v = parse_double(s, row, field);
  if (v < 0.0 || v > 1.0) row_error(row, std::string(field) + " outside [0, 1]");
  return v;
}

// "8/255" for multiples of 1/255, the plain number otherwise.
std::string epsilon_label(double eps) {
  const double k = eps * 255.0;
  if (eps > 0 && std::abs(k - std::round(k)) < 1e-6) {
    return std::to_string(static_cast<long>(std::round(k))) + "/255";
  }
  return real(eps, "%g");
}

}  // namespace

std::string format_csv(const std::vector<ResultRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    check_field(r.dataset, "dataset");
    check_field(r.property_kind, "property_kind");
    check_field(r.attack, "attack");
    check_field(r.defense, "defense");
    check_field(r.defense_param, "defense_param");
    check_field(r.model_id, "model_id");
    out += r.dataset + "," + r.property_kind + "," + real(r.property_factor) + "," + r.attack + "," +
           real(r.epsilon) + "," + r.defense + "," + r.defense_param + "," +
           real(r.clean_acc, "%.6f") + "," + real(r.adv_acc, "%.6f") + "," +
           (r.defended_acc ? real(*r.defended_acc, "%.6f") : "") + "," +
           std::to_string(r.n_samples) + "," + std::to_string(r.seed) + "," + r.model_id + "\n";
  }
  return out;
}

std::vector<ResultRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t row = 1;
  if (!std::getline(in, line)) row_error(row, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) row_error(row, "header mismatch");
  std::vector<ResultRecord> out;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
      f.push_back(line.substr(start, pos - start));
    }
    f.push_back(line.substr(start));
    if (f.size() != 13) {
      row_error(row, "expected 13 fields, found " + std::to_string(f.size()));
    }
    ResultRecord r;
    r.dataset = f[0];
    r.property_kind = f[1];
    r.property_factor = parse_double(f[2], row, "property_factor");
    r.attack = f[3];
    r.epsilon = parse_double(f[4], row, "epsilon");
    r.defense = f[5];
    r.defense_param = f[6];
    r.clean_acc = parse_accuracy(f[7], row, "clean_acc");
    r.adv_acc = parse_accuracy(f[8], row, "adv_acc");
    if (r.defense == "none") {
      if (!f[9].empty()) row_error(row, "defended_acc must be empty when defense is none");
    } else {
      if (f[9].empty()) row_error(row, "defended_acc missing for defense " + r.defense);
      r.defended_acc = parse_accuracy(f[9], row, "defended_acc");
    }
    r.n_samples = parse_u64(f[10], row, "n_samples");
    r.seed = parse_u64(f[11], row, "seed");
    r.model_id = f[12];
    if (r.attack.empty() || r.defense.empty()) row_error(row, "empty attack or defense");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ResultRecord> read_csv(const std::filesystem::path& path) {
  const auto bytes = container::read_file(path);
  return parse_csv(std::string(bytes.begin(), bytes.end()));
}

std::string render_markdown(const std::vector<ResultRecord>& records) {
  std::vector<ResultRecord> sorted = records;
  sort_records(sorted);
  std::vector<std::string> attacks;
  for (const auto& r : sorted) {
    if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end()) attacks.push_back(r.attack);
  }
  std::string out = "| defense | property | epsilon |";
  std::string rule = "|---|---|---|";
  for (const auto& a : attacks) {
    out += " " + a + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";

  using RowKey = std::tuple<std::string, std::string, std::string, double, double>;
  std::map<RowKey, std::map<std::string, double>> rows;
  std::map<RowKey, std::string> row_defense;
  for (const auto& r : sorted) {
    const std::string def = r.defense_param.empty() ? r.defense : r.defense + " (" + r.defense_param + ")";
    const RowKey key{r.defense, r.defense_param, r.property_kind, r.property_factor, r.epsilon};
    rows[key][r.attack] = reported_accuracy(r);
    row_defense[key] = def;
  }
  for (const auto& [key, cells] : rows) {
    const auto& [defense, param, kind, factor, eps] = key;
    out += "| " + row_defense[key] + " | " + kind + real(factor, "%g") + " | " +
           (eps == 0.0 ? std::string("0") : epsilon_label(eps)) + " |";
    for (const auto& a : attacks) {
      const auto it = cells.find(a);
      out += " " + (it == cells.end() ? std::string("-") : real(it->second, "%.4f")) + " |";
    }
    out += "\n";
  }
  return out;
}

std::string render_plot_data(const std::vector<ResultRecord>& records) {
  std::vector<ResultRecord> sorted = records;
  sort_records(sorted);
  ordered_json panels = ordered_json::array();
  ordered_json baselines = ordered_json::array();
  // (defense, defense_param, attack) -> series label -> points
  std::map<std::tuple<std::string, std::string, std::string>,
           std::map<std::pair<std::string, double>, std::vector<std::pair<double, double>>>>
      grid;
  for (const auto& r : sorted) {
    if (r.attack == "none") {
      baselines.push_back({{"defense", r.defense},
                           {"defense_param", r.defense_param},
                           {"property_kind", r.property_kind},
                           {"property_factor", r.property_factor},
                           {"clean_acc", r.clean_acc},
                           {"defended_acc", reported_accuracy(r)}});
      continue;
    }
    grid[{r.defense, r.defense_param, r.attack}][{r.property_kind, r.property_factor}].emplace_back(
        r.epsilon, reported_accuracy(r));
  }
  for (const auto& [panel, series] : grid) {
    ordered_json s = ordered_json::array();
    for (const auto& [prop, points] : series) {
      ordered_json pts = ordered_json::array();
      for (const auto& [eps, acc] : points) pts.push_back({eps, acc});
      s.push_back({{"property_kind", prop.first}, {"property_factor", prop.second}, {"points", pts}});
    }
    panels.push_back({{"defense", std::get<0>(panel)},
                      {"defense_param", std::get<1>(panel)},
                      {"attack", std::get<2>(panel)},
                      {"series", s}});
  }
  return ordered_json{{"panels", panels}, {"baselines", baselines}}.dump(2) + "\n";
}

}  // namespace advbench
