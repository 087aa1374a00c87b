#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tppkit/augment.hpp"
#include "tppkit/event_stream.hpp"
#include "tppkit/model.hpp"

namespace tppkit {

struct StreamLL {
  std::string id;
  double ll = 0.0;
  std::size_t num_events = 0;
  double horizon = 0.0;
};

struct TestLLReport {
  std::vector<StreamLL> streams;
  double total = 0.0;
};

// Quadrature LL of every stream under `fakes` fake epochs per gap.
// Throws DataError if a label is outside the model's label set.
TestLLReport test_ll(const ModelParams& params, const ModelConfig& config, const Dataset& dataset,
                     int fakes, int threads = 1);

// CSV `stream_id,ll,num_events,horizon`, one row per stream plus a `total` row.
void write_test_ll_csv(const TestLLReport& report, const std::filesystem::path& path);

struct AttentionEdge {
  int target = 0;  // attending channel k
  int source = 0;  // parental label q
  double weight = 0.0;
};

struct AttentionGraph {
  // adjacency[k][q]: attention of channel k on label-q bank slots, averaged
  // over tokens and divided by the bank depth J.
  std::vector<std::vector<double>> adjacency;
  double threshold = 0.0;
  std::vector<AttentionEdge> edges;  // A[k][q] >= threshold, heaviest first
  std::vector<std::string> label_names;
  std::size_t token_count = 0;
};

// Uses the model's own fake count. Throws DataError when memory_depth is 0.
AttentionGraph attention_graph(const ModelParams& params, const ModelConfig& config,
                               const Dataset& dataset, double threshold, int threads = 1);

// Graphviz digraph; edges run source -> target with weight="%.4f".
std::string attention_dot(const AttentionGraph& graph);
nlohmann::json attention_json(const AttentionGraph& graph);

struct TracePoint {
  double time = 0.0;
  int label = 0;
  double lambda = 0.0;
  bool is_real_event = false;  // the token is a real event of this label
  TokenKind kind = TokenKind::kReal;
};

struct IntensityTrace {
  std::string stream_id;
  std::vector<TracePoint> points;  // token-major, label-minor
};

// Rates of every real label at every augmented token after BOS.
IntensityTrace intensity_trace(const ModelParams& params, const ModelConfig& config,
                               const EventStream& stream, int fakes);

// CSV `time,label,lambda,is_real_event`.
void write_trace_csv(const IntensityTrace& trace, const std::filesystem::path& path);

// Mean rate at own-label real events divided by mean rate at fake tokens.
double trace_sharpness(const IntensityTrace& trace);

}  // namespace tppkit
