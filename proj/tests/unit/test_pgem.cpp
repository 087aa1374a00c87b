#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>

#include "tppkit/error.hpp"
#include "tppkit/pgem.hpp"

using namespace tppkit;

namespace {

// Brute-force conditional rate: scan every earlier event.
double oracle_rate(const PgemSpec& spec, const EventStream& s, int k, double t) {
  const PgemNode& node = spec.nodes[static_cast<std::size_t>(k)];
  std::size_t mask = 0;
  for (std::size_t j = 0; j < node.parents.size(); ++j)
    for (const Epoch& e : s.epochs)
      if (e.label == node.parents[j] && e.time < t && e.time >= t - node.windows[j]) mask |= std::size_t{1} << j;
  return node.rates[mask];
}

double oracle_log_term(const PgemSpec& spec, const EventStream& s) {
  double total = 0.0;
  for (const Epoch& e : s.epochs) total += std::log(oracle_rate(spec, s, e.label, e.time));
  return total;
}

// Piecewise-constant quadrature on a grid holding every change point plus
// `extra` uniform refinement points; rates read at cell midpoints.
double grid_ll(const PgemSpec& spec, const EventStream& s, int extra) {
  std::vector<double> grid{0.0, s.horizon};
  for (int i = 1; i < extra; ++i) grid.push_back(s.horizon * i / extra);
  for (const Epoch& e : s.epochs) {
    grid.push_back(e.time);
    for (const PgemNode& n : spec.nodes)
      for (double w : n.windows) grid.push_back(std::min(e.time + w, s.horizon));
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double mid = 0.5 * (grid[i] + grid[i + 1]);
    double sum = 0.0;
    for (int k = 0; k < spec.label_count; ++k) sum += oracle_rate(spec, s, k, mid);
    integral += (grid[i + 1] - grid[i]) * sum;
  }
  return oracle_log_term(spec, s) - integral;
}

PgemSpec poisson_spec(double rate) {
  PgemSpec spec;
  spec.label_count = 1;
  spec.nodes.push_back({{}, {}, {rate}});
  return spec;
}

// A parentless; B driven by A inside window w.
PgemSpec gated_spec(double w, double off, double on) {
  PgemSpec spec;
  spec.label_count = 2;
  spec.nodes.push_back({{}, {}, {0.05}});
  spec.nodes.push_back({{0}, {w}, {off, on}});
  return spec;
}

}  // namespace

TEST_CASE("sample_spec with one label") {
  const PgemSpec spec = sample_spec(1, 9);
  REQUIRE(spec.nodes.size() == 1);
  CHECK(spec.nodes[0].parents.empty());
  REQUIRE(spec.nodes[0].rates.size() == 1);
  CHECK(spec.nodes[0].rates[0] >= 0.001);
  CHECK(spec.nodes[0].rates[0] <= 0.1);
  CHECK_THROWS_AS(sample_spec(0, 1), DataError);
}

TEST_CASE("sample_spec is deterministic and valid") {
  CHECK(sample_spec(5, 77) == sample_spec(5, 77));
  CHECK_FALSE(sample_spec(5, 77) == sample_spec(5, 78));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const PgemSpec spec = sample_spec(5, seed);
    CHECK_NOTHROW(spec.validate());
    for (std::size_t k = 0; k < spec.nodes.size(); ++k) {
      const PgemNode& n = spec.nodes[k];
      CHECK(n.parents.size() <= 2);
      for (int p : n.parents) CHECK(p != static_cast<int>(k));
      for (double w : n.windows) CHECK((w == 15.0 || w == 30.0 || w == 60.0));
      for (double r : n.rates) CHECK((r >= 0.001 && r <= 0.1));
    }
  }
}

TEST_CASE("parent counts are uniform on {0, 1, 2} (chi-square, p > 0.01)") {
  std::array<double, 3> counts{};
  for (std::uint64_t seed = 0; seed < 1000; ++seed)
    counts[sample_spec(5, seed).nodes[0].parents.size()] += 1.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 1000.0 / 3.0) * (c - 1000.0 / 3.0) / (1000.0 / 3.0);
  CHECK(chi2 < 9.2103);  // chi-square(2) upper 1% point
}

TEST_CASE("homogeneous simulation matches Poisson statistics") {
  const PgemSpec spec = poisson_spec(0.1);
  double total = 0.0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    const EventStream s = simulate(spec, 1000.0, static_cast<std::uint64_t>(seed));
    CHECK_NOTHROW(s.validate());
    total += static_cast<double>(s.epochs.size());
  }
  const double mean = total / seeds;
  CHECK(std::abs(mean - 100.0) < 3.0 * 10.0 / std::sqrt(static_cast<double>(seeds)));
}

TEST_CASE("simulation respects window conditioning") {
  const double w = 10.0;
  const EventStream s = simulate(gated_spec(w, 0.001, 0.5), 10000.0, 4);
  int in_window = 0, b_events = 0;
  double last_a = -1e300;
  for (const Epoch& e : s.epochs) {
    if (e.label == 0) {
      last_a = e.time;
    } else {
      ++b_events;
      in_window += e.time - last_a <= w;
    }
  }
  REQUIRE(b_events > 100);
  CHECK(static_cast<double>(in_window) / b_events >= 0.95);
}

TEST_CASE("simulate: zero horizon, determinism, validity") {
  const PgemSpec spec = sample_spec(5, 3);
  CHECK(simulate(spec, 0.0, 1).epochs.empty());
  CHECK(simulate(spec, 1000.0, 11) == simulate(spec, 1000.0, 11));
  CHECK_FALSE(simulate(spec, 1000.0, 11) == simulate(spec, 1000.0, 12));
  CHECK_THROWS_AS(simulate(spec, -1.0, 1), DataError);
  for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK_NOTHROW(simulate(sample_spec(5, seed), 1000.0, seed).validate());
}

TEST_CASE("exact_ll closed forms") {
  const PgemSpec spec = poisson_spec(0.1);
  const EventStream s{"s", {{2.0, 0}, {5.0, 0}}, 10.0, 1};
  REQUIRE(exact_ll(spec, s).has_value());
  CHECK(*exact_ll(spec, s) == doctest::Approx(2.0 * std::log(0.1) - 1.0).epsilon(1e-12));
  CHECK(*exact_ll(spec, s) == doctest::Approx(-5.605170).epsilon(1e-6));
  const EventStream empty{"e", {}, 10.0, 1};
  CHECK(*exact_ll(spec, empty) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(exact_ll(spec, EventStream{"x", {}, 10.0, 2}), DataError);
}

TEST_CASE("build_trace examples") {
  PgemSpec spec;
  spec.label_count = 2;
  spec.nodes.push_back({{}, {}, {0.1}});
  spec.nodes.push_back({{0}, {15.0}, {0.01, 0.2}});

  const ChangePointTrace none = build_trace(spec, EventStream{"e", {}, 10.0, 2});
  REQUIRE(none.segments.size() == 1);
  CHECK(none.segments[0].start == 0.0);
  CHECK(none.segments[0].end == 10.0);
  CHECK(none.segments[0].rates == std::vector<double>{0.1, 0.01});

  const ChangePointTrace one = build_trace(spec, EventStream{"o", {{3.0, 0}}, 10.0, 2});
  REQUIRE(one.segments.size() == 2);
  CHECK(one.segments[0].end == 3.0);
  CHECK(one.segments[1].start == 3.0);
  CHECK(one.segments[1].end == 10.0);
  CHECK(one.segments[1].rates == std::vector<double>{0.1, 0.2});

  const ChangePointTrace expiring = build_trace(spec, EventStream{"x", {{3.0, 0}}, 30.0, 2});
  REQUIRE(expiring.segments.size() == 3);
  CHECK(expiring.segments[1].end == 18.0);
  CHECK(expiring.segments[2].rates == std::vector<double>{0.1, 0.01});
}

TEST_CASE("property: traces tile [0, T] and agree with brute-force rates") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const PgemSpec spec = sample_spec(5, seed);
    const EventStream s = simulate(spec, 1000.0, seed + 500);
    const ChangePointTrace trace = build_trace(spec, s);
    REQUIRE_FALSE(trace.segments.empty());
    CHECK(trace.segments.front().start == 0.0);
    CHECK(trace.segments.back().end == s.horizon);
    double length = 0.0;
    for (std::size_t i = 0; i < trace.segments.size(); ++i) {
      const TraceSegment& seg = trace.segments[i];
      CHECK(seg.end > seg.start);
      if (i > 0) CHECK(seg.start == trace.segments[i - 1].end);
      length += seg.end - seg.start;
      // Constant within the segment: probe both quarter points.
      for (double f : {0.25, 0.75}) {
        const double t = seg.start + f * (seg.end - seg.start);
        for (int k = 0; k < 5; ++k) CHECK(seg.rates[static_cast<std::size_t>(k)] == oracle_rate(spec, s, k, t));
      }
    }
    CHECK(std::abs(length - s.horizon) < 1e-9);

    // Integral term: exact_ll minus the brute-force log term.
    const double integral = oracle_log_term(spec, s) - *exact_ll(spec, s);
    CHECK(std::abs(integral - trace.integral()) < 1e-9);
  }
}

TEST_CASE("property: refined-grid quadrature converges to exact_ll") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PgemSpec spec = sample_spec(5, seed);
    const EventStream s = simulate(spec, 1000.0, seed + 900);
    const double exact = *exact_ll(spec, s);
    for (int extra : {1, 10, 1000}) CHECK(std::abs(grid_ll(spec, s, extra) - exact) < 1e-6);
  }
}

TEST_CASE("generating spec beats the homogeneous fit") {
  const PgemSpec spec = gated_spec(10.0, 0.002, 0.3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const EventStream s = simulate(spec, 20000.0, seed);
    double homogeneous = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double n = static_cast<double>(
          std::count_if(s.epochs.begin(), s.epochs.end(), [&](const Epoch& e) { return e.label == k; }));
      if (n > 0) homogeneous += n * std::log(n / s.horizon) - n;
    }
    CHECK(*exact_ll(spec, s) > homogeneous);
  }
}

TEST_CASE("spec JSON round trip and validation") {
  const PgemSpec spec = sample_spec(5, 12);
  CHECK(pgem_from_json(pgem_to_json(spec)) == spec);

  const auto path = std::filesystem::temp_directory_path() / "tppkit_test_spec.json";
  save_pgem(spec, path);
  CHECK(load_pgem(path) == spec);

  const nlohmann::json doc = nlohmann::json::parse(R"({"num_labels": 2, "nodes": [
      {"parents": [], "windows": [], "rates": {"": 0.1}},
      {"parents": [0], "windows": [15], "rates": {"0": 0.01, "1": 0.2}}]})");
  const PgemSpec parsed = pgem_from_json(doc);
  CHECK(parsed.nodes[1].rates == std::vector<double>{0.01, 0.2});

  nlohmann::json missing = doc;
  missing["nodes"][1]["rates"].erase("1");
  CHECK_THROWS_AS(pgem_from_json(missing), DataError);
  nlohmann::json zero = doc;
  zero["nodes"][1]["rates"]["1"] = 0.0;
  CHECK_THROWS_AS(pgem_from_json(zero), DataError);
  nlohmann::json bad_window = doc;
  bad_window["nodes"][1]["windows"][0] = -1.0;
  CHECK_THROWS_AS(pgem_from_json(bad_window), DataError);
}
