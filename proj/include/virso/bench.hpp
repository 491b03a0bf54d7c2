#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace virso::bench {

enum class Scope { kDevice, kBoard };
std::string to_string(Scope s);
Scope scope_from_string(const std::string& s);

struct TelemetrySample {
  double t_s = 0.0;
  double power_w = 0.0;
};

struct TelemetryTrace {
  std::vector<TelemetrySample> samples;
  double interval_s = 0.0;  // nominal sampling period
  Scope scope = Scope::kDevice;

  /// Timestamps strictly increasing, power >= 0 and finite.
  void validate() const;
};

/// Parses `t_s,power_w` CSV text (header required).
TelemetryTrace parse_telemetry_csv(const std::string& text, double interval_s, Scope scope);
TelemetryTrace read_telemetry_csv(const std::string& path, double interval_s, Scope scope);

/// Rectangle rule: sum_i P_i * (t_{i+1} - t_i), the last sample held for the
/// nominal interval, divided by the iteration count.
double energy_per_iteration(const TelemetryTrace& trace, std::size_t iterations);

/// Wall-clock ms per sample: `run(i)` is called for every sample after
/// `warmup` discarded passes over the first samples; the span over the whole
/// set is divided by its size and averaged over `repeats`.
double measure_latency(const std::function<void(std::size_t)>& run, std::size_t samples, std::size_t warmup,
                       std::size_t repeats);

/// Energy-delay product, J * ms.
double edp(double energy_j_per_it, double latency_ms);
/// (100 / err%) / P.
double power_normalized_accuracy(double mean_error_percent, double power_w);
/// N * C / M.
double reconstruction_ratio(double nodes, double channels, double inputs);

struct BenchReport {
  std::string model;
  double error_percent = 0.0;
  double flops = 0.0;
  double energy_j_per_it = 0.0;
  double latency_ms_per_it = 0.0;
  double edp_j_ms = 0.0;
  double eta_per_watt = 0.0;  // 0 when power is unknown
  double power_w = 0.0;
  std::size_t dataset_size = 0;
  Scope scope = Scope::kDevice;

  /// Fills edp (and eta when power is known) from the primary fields.
  void derive();
};

struct EmittedReport {
  std::string json;
  std::string csv;
};

/// Table with columns model, error, FLOPs, energy, latency, EDP plus scope.
/// Refuses reports with mixed scopes unless `allow_mixed_scope`.
EmittedReport emit_report(const std::vector<BenchReport>& reports, bool allow_mixed_scope = false);

std::vector<BenchReport> parse_report_csv(const std::string& csv);
std::vector<BenchReport> parse_report_json(const std::string& json);

/// Reads a published-inputs CSV (model,error_percent,flops,energy_j,latency_ms,scope[,power_w])
/// and derives every report.
std::vector<BenchReport> read_inputs_csv(const std::string& path);

}  // namespace virso::bench
