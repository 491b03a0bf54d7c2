#include "virso/bench.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "virso/error.hpp"

namespace virso::bench {

std::string to_string(Scope s) { return s == Scope::kDevice ? "device" : "board"; }

Scope scope_from_string(const std::string& s) {
  if (s == "device") return Scope::kDevice;
  if (s == "board") return Scope::kBoard;
  throw Error(ErrorKind::kInvalidInput, "unknown telemetry scope '" + s + "'");
}

namespace {

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw Error(ErrorKind::kInvalidInput, "bad number '" + s + "' for " + what);
  return v;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw Error(ErrorKind::kInvalidParameter, std::string(name) + " must be positive and finite");
  }
}

}  // namespace

void TelemetryTrace::validate() const {
  if (samples.empty()) throw Error(ErrorKind::kInvalidInput, "empty telemetry trace");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i].t_s) || !std::isfinite(samples[i].power_w) || samples[i].power_w < 0.0) {
      throw Error(ErrorKind::kInvalidInput, "invalid telemetry sample " + std::to_string(i));
    }
    if (i > 0 && !(samples[i].t_s > samples[i - 1].t_s)) {
      throw Error(ErrorKind::kInvalidInput, "telemetry timestamps not strictly increasing at " + std::to_string(i));
    }
  }
}

TelemetryTrace parse_telemetry_csv(const std::string& text, double interval_s, Scope scope) {
  std::istringstream in(text);
  std::string line;
  TelemetryTrace trace;
  trace.interval_s = interval_s;
  trace.scope = scope;
  bool header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (!header) {
      if (f.size() != 2 || f[0] != "t_s" || f[1] != "power_w") {
        throw Error(ErrorKind::kInvalidInput, "telemetry header must be 't_s,power_w'");
      }
      header = true;
      continue;
    }
    if (f.size() != 2) throw Error(ErrorKind::kInvalidInput, "telemetry line " + std::to_string(line_no) + " malformed");
    trace.samples.push_back({parse_number(f[0], "t_s"), parse_number(f[1], "power_w")});
  }
  trace.validate();
  return trace;
}

TelemetryTrace read_telemetry_csv(const std::string& path, double interval_s, Scope scope) {
  return parse_telemetry_csv(read_file(path), interval_s, scope);
}

double energy_per_iteration(const TelemetryTrace& trace, std::size_t iterations) {
  trace.validate();
  if (iterations == 0) throw Error(ErrorKind::kInvalidParameter, "iterations must be >= 1");
  const auto& s = trace.samples;
  if (s.size() < 2 && !(trace.interval_s > 0.0)) {
    throw Error(ErrorKind::kInvalidInput, "need >= 2 samples or a nominal interval");
  }
  double energy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double dt = i + 1 < s.size() ? s[i + 1].t_s - s[i].t_s
                                        : (trace.interval_s > 0.0 ? trace.interval_s : s[i].t_s - s[i - 1].t_s);
    energy += s[i].power_w * dt;
  }
  return energy / static_cast<double>(iterations);
}

double measure_latency(const std::function<void(std::size_t)>& run, std::size_t samples, std::size_t warmup,
                       std::size_t repeats) {
  if (samples == 0) throw Error(ErrorKind::kInvalidInput, "latency needs a non-empty dataset");
  if (repeats == 0) throw Error(ErrorKind::kInvalidParameter, "repeats must be >= 1");
  for (std::size_t w = 0; w < warmup; ++w) run(w % samples);
  double total = 0.0;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < samples; ++i) run(i);
    total += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return total / static_cast<double>(repeats) / static_cast<double>(samples);
}

double edp(double energy, double latency_ms) {
  require_positive(energy, "energy");
  require_positive(latency_ms, "latency");
  return energy * latency_ms;
}

double power_normalized_accuracy(double err, double power) {
  require_positive(err, "mean error");
  require_positive(power, "power");
  return (100.0 / err) / power;
}

double reconstruction_ratio(double nodes, double channels, double inputs) {
  require_positive(nodes, "node count");
  require_positive(channels, "channel count");
  require_positive(inputs, "input count");
  return nodes * channels / inputs;
}

void BenchReport::derive() {
  edp_j_ms = edp(energy_j_per_it, latency_ms_per_it);
  eta_per_watt = power_w > 0.0 && error_percent > 0.0 ? power_normalized_accuracy(error_percent, power_w) : 0.0;
}

namespace {

const char* kColumns = "model,error_percent,flops,energy_j,latency_ms,edp_j_ms,eta_per_watt,power_w,dataset_size,scope";

nlohmann::json to_json(const BenchReport& r) {
  return {{"model", r.model},
          {"error_percent", r.error_percent},
          {"flops", r.flops},
          {"energy_j", r.energy_j_per_it},
          {"latency_ms", r.latency_ms_per_it},
          {"edp_j_ms", r.edp_j_ms},
          {"eta_per_watt", r.eta_per_watt},
          {"power_w", r.power_w},
          {"dataset_size", r.dataset_size},
          {"scope", to_string(r.scope)}};
}

}  // namespace

EmittedReport emit_report(const std::vector<BenchReport>& reports, bool allow_mixed_scope) {
  if (reports.empty()) throw Error(ErrorKind::kInvalidInput, "report needs at least one row");
  for (const auto& r : reports) {
    if (r.scope != reports.front().scope && !allow_mixed_scope) {
      throw Error(ErrorKind::kInvalidUsage,
                  "board- and device-level measurements are not directly comparable; pass the mixed-scope override");
    }
    if (!std::isfinite(r.error_percent) || !std::isfinite(r.flops) || !std::isfinite(r.energy_j_per_it) ||
        !std::isfinite(r.latency_ms_per_it) || !std::isfinite(r.edp_j_ms) || !std::isfinite(r.eta_per_watt)) {
      throw Error(ErrorKind::kInvalidInput, "non-finite field in report '" + r.model + "'");
    }
  }
  nlohmann::json rows = nlohmann::json::array();
  std::ostringstream csv;
  csv << kColumns << '\n';
  for (const auto& r : reports) {
    rows.push_back(to_json(r));
    csv << quote(r.model) << ',' << format_number(r.error_percent) << ',' << format_number(r.flops) << ','
        << format_number(r.energy_j_per_it) << ',' << format_number(r.latency_ms_per_it) << ','
        << format_number(r.edp_j_ms) << ',' << format_number(r.eta_per_watt) << ',' << format_number(r.power_w)
        << ',' << r.dataset_size << ',' << to_string(r.scope) << '\n';
  }
  nlohmann::json doc = {{"columns", kColumns}, {"mixed_scope", allow_mixed_scope}, {"rows", rows}};
  return {doc.dump(2), csv.str()};
}

std::vector<BenchReport> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<BenchReport> out;
  bool header = false;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (!header) {
      if (trim(line) != kColumns) throw Error(ErrorKind::kInvalidInput, "unexpected report header");
      header = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw Error(ErrorKind::kInvalidInput, "report row has " + std::to_string(f.size()) + " fields");
    BenchReport r;
    r.model = f[0];
    r.error_percent = parse_number(f[1], "error_percent");
    r.flops = parse_number(f[2], "flops");
    r.energy_j_per_it = parse_number(f[3], "energy_j");
    r.latency_ms_per_it = parse_number(f[4], "latency_ms");
    r.edp_j_ms = parse_number(f[5], "edp_j_ms");
    r.eta_per_watt = parse_number(f[6], "eta_per_watt");
    r.power_w = parse_number(f[7], "power_w");
    r.dataset_size = static_cast<std::size_t>(parse_number(f[8], "dataset_size"));
    r.scope = scope_from_string(f[9]);
    out.push_back(r);
  }
  return out;
}

std::vector<BenchReport> parse_report_json(const std::string& text) {
  std::vector<BenchReport> out;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& j : doc.at("rows")) {
      BenchReport r;
      r.model = j.at("model").get<std::string>();
      r.error_percent = j.at("error_percent").get<double>();
      r.flops = j.at("flops").get<double>();
      r.energy_j_per_it = j.at("energy_j").get<double>();
      r.latency_ms_per_it = j.at("latency_ms").get<double>();
      r.edp_j_ms = j.at("edp_j_ms").get<double>();
      r.eta_per_watt = j.at("eta_per_watt").get<double>();
      r.power_w = j.at("power_w").get<double>();
      r.dataset_size = j.at("dataset_size").get<std::size_t>();
      r.scope = scope_from_string(j.at("scope").get<std::string>());
      out.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("report json: ") + e.what());
  }
  return out;
}

std::vector<BenchReport> read_inputs_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::string> header;
  std::vector<BenchReport> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (header.empty()) {
      header = f;
      continue;
    }
    if (f.size() != header.size()) throw Error(ErrorKind::kInvalidInput, "inputs row width differs from header");
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < f.size(); ++i) row[header[i]] = f[i];
    auto need = [&](const char* k) -> const std::string& {
      const auto it = row.find(k);
      if (it == row.end()) throw Error(ErrorKind::kInvalidInput, std::string("inputs csv lacks column ") + k);
      return it->second;
    };
    BenchReport r;
    r.model = need("model");
    r.error_percent = parse_number(need("error_percent"), "error_percent");
    r.flops = parse_number(need("flops"), "flops");
    r.energy_j_per_it = parse_number(need("energy_j"), "energy_j");
    r.latency_ms_per_it = parse_number(need("latency_ms"), "latency_ms");
    r.scope = scope_from_string(need("scope"));
    if (row.count("power_w")) r.power_w = parse_number(row["power_w"], "power_w");
    r.derive();
    out.push_back(r);
  }
  return out;
}

}  // namespace virso::bench
