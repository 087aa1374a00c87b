#pragma once

// Proximal graphical event models: a node's intensity is piecewise constant
// and is read from a table indexed by which parents occurred at least once
// in their trailing windows [t - w, t).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tppkit/event_stream.hpp"

namespace tppkit {

struct PgemNode {
  std::vector<int> parents;
  std::vector<double> windows;  // one per parent
  // rates[mask], bit j of mask set iff parents[j] is active; 2^|parents| entries.
  std::vector<double> rates;

  bool operator==(const PgemNode&) const = default;
};

struct PgemSpec {
  int label_count = 0;
  std::vector<PgemNode> nodes;

  void validate() const;
  bool operator==(const PgemSpec&) const = default;
};

struct PgemSampleConfig {
  int max_parents = 2;
  std::vector<double> windows{15.0, 30.0, 60.0};
  double rate_min = 0.001;
  double rate_max = 0.1;
};

// Per node: parent count uniform on {0..min(max_parents, M-1)}, parents drawn
// without replacement from the other labels, windows uniform from the set,
// rates log-uniform on [rate_min, rate_max].
PgemSpec sample_spec(int label_count, std::uint64_t seed, const PgemSampleConfig& config = {});

// Exact event-driven simulation on [0, horizon].
EventStream simulate(const PgemSpec& spec, double horizon, std::uint64_t seed,
                     std::string stream_id = "s0");

// Conditional rates given the strict history of a stream.
class PgemHistory {
 public:
  PgemHistory(const PgemSpec& spec, const EventStream& stream);

  // Rate of every node at time t given events strictly before t.
  std::vector<double> rates_at(double t) const;
  double rate_at(int node, double t) const;

 private:
  bool occurred_in(int label, double from, double to) const;  // any event in [from, to)

  const PgemSpec* spec_;
  std::vector<std::vector<double>> times_by_label_;
};

struct TraceSegment {
  double start = 0.0;
  double end = 0.0;
  std::vector<double> rates;
};

// Segments tiling [0, T] on which every node rate is constant.
struct ChangePointTrace {
  std::vector<TraceSegment> segments;

  // Integral over [0, T] of the summed node rates.
  double integral() const;
};

// Breaks at every event time and every event time + parent window inside (0, T).
ChangePointTrace build_trace(const PgemSpec& spec, const EventStream& stream);

// Exact log-likelihood. std::nullopt stands for -infinity: some event fell
// at a point where its own rate is zero.
std::optional<double> exact_ll(const PgemSpec& spec, const EventStream& stream);

nlohmann::json pgem_to_json(const PgemSpec& spec);
PgemSpec pgem_from_json(const nlohmann::json& doc);
void save_pgem(const PgemSpec& spec, const std::filesystem::path& path);
PgemSpec load_pgem(const std::filesystem::path& path);

}  // namespace tppkit
