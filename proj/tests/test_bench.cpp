#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <map>
#include <sstream>
#include <thread>

#include "virso/bench.hpp"
#include "virso/error.hpp"

using namespace virso;
using namespace virso::bench;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

std::string table5_path() { return std::string(VIRSO_SOURCE_DIR) + "/data/table5.csv"; }

}  // namespace

TEST(Energy, ConstantHundredWatts) {
  TelemetryTrace t;
  t.interval_s = 0.1;
  for (int i = 0; i < 31; ++i) t.samples.push_back({0.1 * i, 100.0});
  EXPECT_NEAR(energy_per_iteration(t, 310), 1.0, 1e-12);
}

TEST(Energy, SawtoothMatchesRectangleSum) {
  TelemetryTrace t;
  t.interval_s = 0.05;
  // Irregular gaps so actual spacing, not the nominal interval, matters.
  const std::vector<double> times{0.0, 0.04, 0.1, 0.13, 0.2, 0.26, 0.3};
  const std::vector<double> watts{10.0, 20.0, 30.0, 10.0, 20.0, 30.0, 10.0};
  for (std::size_t i = 0; i < times.size(); ++i) t.samples.push_back({times[i], watts[i]});
  const double hand = 10 * 0.04 + 20 * 0.06 + 30 * 0.03 + 10 * 0.07 + 20 * 0.06 + 30 * 0.04 + 10 * 0.05;
  EXPECT_NEAR(energy_per_iteration(t, 4), hand / 4.0, 1e-14);
}

TEST(Energy, LinearInPower) {
  TelemetryTrace t;
  t.interval_s = 0.01;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(5.0, 50.0);
  for (int i = 0; i < 50; ++i) t.samples.push_back({0.01 * i, u(rng)});
  TelemetryTrace scaled = t;
  for (auto& s : scaled.samples) s.power_w *= 3.0;
  EXPECT_NEAR(energy_per_iteration(scaled, 7), 3.0 * energy_per_iteration(t, 7), 1e-12);
}

TEST(Energy, GnoPublishedFigureWithinTolerance) {
  // 572 W held for 20.48 ms gives 11.71 J against the published 10.07 J/it.
  TelemetryTrace t;
  t.interval_s = 0.02048;
  t.samples.push_back({0.0, 572.0});
  const double e = energy_per_iteration(t, 1);
  EXPECT_NEAR(e, 572.0 * 0.02048, 1e-12);
  EXPECT_LE(std::abs(e - 10.07) / std::max(e, 10.07), 0.15);
}

TEST(Energy, Errors) {
  TelemetryTrace t;
  EXPECT_THROW(energy_per_iteration(t, 1), Error);
  t.samples = {{0.0, 1.0}, {0.1, 1.0}};
  EXPECT_THROW(energy_per_iteration(t, 0), Error);
  t.samples = {{0.0, 1.0}, {0.0, 1.0}};
  EXPECT_THROW(energy_per_iteration(t, 1), Error);
  t.samples = {{0.0, -1.0}};
  EXPECT_THROW(energy_per_iteration(t, 1), Error);
}

TEST(Telemetry, CsvParsing) {
  const auto t = parse_telemetry_csv("t_s,power_w\n0.0,100\n0.1,100\n0.2,100\n", 0.1, Scope::kBoard);
  EXPECT_EQ(t.samples.size(), 3u);
  EXPECT_EQ(t.scope, Scope::kBoard);
  EXPECT_NEAR(energy_per_iteration(t, 3), 10.0, 1e-12);
  EXPECT_THROW(parse_telemetry_csv("time,watts\n0,1\n", 0.1, Scope::kDevice), Error);
  EXPECT_THROW(parse_telemetry_csv("t_s,power_w\n0,abc\n", 0.1, Scope::kDevice), Error);
}

TEST(Metrics, PublishedValues) {
  EXPECT_LE(rel(edp(10.07, 20.48), 206.2), 0.005);
  EXPECT_LE(rel(power_normalized_accuracy(0.90, 124.41), 0.893), 0.005);
  EXPECT_LE(rel(reconstruction_ratio(3977, 4, 102), 155.96), 0.005);
  EXPECT_LE(rel(reconstruction_ratio(1733, 3, 102), 51.0), 0.005);
  EXPECT_LE(rel(reconstruction_ratio(4225, 3, 90 * 3), 47.0), 0.005);
}

TEST(Metrics, RejectNonPositive) {
  EXPECT_THROW(edp(0.0, 1.0), Error);
  EXPECT_THROW(edp(1.0, -1.0), Error);
  EXPECT_THROW(power_normalized_accuracy(0.0, 1.0), Error);
  EXPECT_THROW(power_normalized_accuracy(1.0, 0.0), Error);
  EXPECT_THROW(reconstruction_ratio(1.0, 1.0, 0.0), Error);
}

TEST(Latency, RepeatsAndDatasetSize) {
  std::size_t calls = 0;
  const auto run = [&](std::size_t) {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  };
  const double a = measure_latency(run, 10, 2, 1);
  EXPECT_EQ(calls, 12u);
  const double b = measure_latency(run, 20, 2, 2);
  EXPECT_GE(a, 2.0);
  EXPECT_LE(std::abs(a - b) / a, 0.2);
  EXPECT_THROW(measure_latency(run, 0, 0, 1), Error);
}

TEST(Report, TableFiveEdpColumn) {
  const auto rows = read_inputs_csv(table5_path());
  ASSERT_EQ(rows.size(), 8u);
  const std::map<std::string, double> expected{{"Geo-FNO (full)", 2.91},
                                               {"NOMAD (full)", 0.96},
                                               {"VIRSO (2-layer)", 2.32},
                                               {"VIRSO (spectral-only)", 7.03},
                                               {"VIRSO (10-layer full)", 10.1},
                                               {"GNO", 206.2}};
  std::size_t matched = 0;
  for (const auto& r : rows) {
    const auto it = expected.find(r.model);
    if (it == expected.end()) continue;
    ++matched;
    EXPECT_LE(rel(r.edp_j_ms, it->second), 0.005) << r.model;
  }
  EXPECT_EQ(matched, expected.size());
}

TEST(Report, SingleRow) {
  BenchReport r;
  r.model = "toy";
  r.error_percent = 1.0;
  r.energy_j_per_it = 2.0;
  r.latency_ms_per_it = 3.0;
  r.derive();
  const auto out = emit_report({r});
  EXPECT_EQ(parse_report_csv(out.csv).size(), 1u);
  EXPECT_EQ(out.csv.substr(0, out.csv.find('\n')),
            "model,error_percent,flops,energy_j,latency_ms,edp_j_ms,eta_per_watt,power_w,dataset_size,scope");
}

TEST(Report, RandomRoundTrip) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1000.0);
  std::vector<BenchReport> rows;
  for (int i = 0; i < 25; ++i) {
    BenchReport r;
    r.model = "m" + std::to_string(i) + (i % 3 == 0 ? ", \"quoted\"" : "");
    r.error_percent = u(rng);
    r.flops = u(rng) * 1e9;
    r.energy_j_per_it = u(rng);
    r.latency_ms_per_it = u(rng);
    r.power_w = i % 2 ? u(rng) : 0.0;
    r.dataset_size = static_cast<std::size_t>(u(rng));
    r.derive();
    rows.push_back(r);
  }
  const auto out = emit_report(rows);
  for (const auto& parsed : {parse_report_csv(out.csv), parse_report_json(out.json)}) {
    ASSERT_EQ(parsed.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(parsed[i].model, rows[i].model);
      EXPECT_EQ(parsed[i].error_percent, rows[i].error_percent);
      EXPECT_EQ(parsed[i].flops, rows[i].flops);
      EXPECT_EQ(parsed[i].energy_j_per_it, rows[i].energy_j_per_it);
      EXPECT_EQ(parsed[i].latency_ms_per_it, rows[i].latency_ms_per_it);
      EXPECT_EQ(parsed[i].edp_j_ms, rows[i].edp_j_ms);
      EXPECT_EQ(parsed[i].eta_per_watt, rows[i].eta_per_watt);
      EXPECT_EQ(parsed[i].power_w, rows[i].power_w);
      EXPECT_EQ(parsed[i].dataset_size, rows[i].dataset_size);
      EXPECT_EQ(parsed[i].scope, rows[i].scope);
    }
  }
}

TEST(Report, MixedScopeRefusedUnlessOverridden) {
  BenchReport a;
  a.model = "a";
  a.energy_j_per_it = 1.0;
  a.latency_ms_per_it = 1.0;
  a.derive();
  BenchReport b = a;
  b.scope = Scope::kBoard;
  try {
    emit_report({a, b});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidUsage);
    EXPECT_NE(std::string(e.what()).find("not directly comparable"), std::string::npos);
  }
  EXPECT_NO_THROW(emit_report({a, b}, true));
  EXPECT_THROW(emit_report({}), Error);
}
