#include "tppkit/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "tppkit/parallel.hpp"
#include "tppkit/error.hpp"
#include "tppkit/numfmt.hpp"
#include "tppkit/training.hpp"

namespace tppkit {

using nlohmann::json;

namespace {

// The stream relabeled onto the model's label set.
EventStream conform(const EventStream& stream, const ModelConfig& config) {
  for (const Epoch& e : stream.epochs)
    if (e.label >= config.label_count)
      throw DataError("stream '" + stream.id + "': label id " + std::to_string(e.label) +
                      " is unknown to the model (M=" + std::to_string(config.label_count) + ")");
  EventStream out = stream;
  out.label_count = config.label_count;
  return out;
}

}  // namespace

TestLLReport test_ll(const ModelParams& params, const ModelConfig& config, const Dataset& dataset,
                     int fakes, int threads) {
  params.check_shapes(config);
  dataset.validate();
  TestLLReport report;
  report.streams.resize(dataset.streams.size());
  detail::parallel_for(dataset.streams.size(), threads, [&](std::size_t i) {
    const EventStream& s = dataset.streams[i];
    const AugmentedSequence seq = augment(conform(s, config), fakes);
    report.streams[i] = {s.id, quadrature_ll(seq, forward(seq, params, config, false).rates),
                         s.epochs.size(), s.horizon};
  });
  for (const StreamLL& s : report.streams) report.total += s.ll;
  return report;
}

void write_test_ll_csv(const TestLLReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "stream_id,ll,num_events,horizon\n";
  std::size_t events = 0;
  double horizon = 0.0;
  for (const StreamLL& s : report.streams) {
    out << s.id << ',' << format_double(s.ll) << ',' << s.num_events << ',' << format_double(s.horizon)
        << '\n';
    events += s.num_events;
    horizon += s.horizon;
  }
  out << "total," << format_double(report.total) << ',' << events << ',' << format_double(horizon) << '\n';
}

AttentionGraph attention_graph(const ModelParams& params, const ModelConfig& config,
                               const Dataset& dataset, double threshold, int threads) {
  if (config.memory_depth == 0) throw DataError("attention disabled: model has memory_depth 0");
  params.check_shapes(config);
  dataset.validate();
  const auto m = static_cast<std::size_t>(config.label_count);

  std::vector<std::vector<std::vector<double>>> partial(dataset.streams.size());
  std::vector<std::size_t> tokens(dataset.streams.size(), 0);
  detail::parallel_for(dataset.streams.size(), threads, [&](std::size_t s) {
    const AugmentedSequence seq = augment(conform(dataset.streams[s], config), config.fake_count);
    const ForwardResult fwd = forward(seq, params, config, true);
    auto& acc = partial[s];
    acc.assign(m, std::vector<double>(m, 0.0));
    for (const AttentionRecord& rec : fwd.attention) {
      for (std::size_t k = 0; k < m; ++k) {
        const auto& alpha = rec.alpha[k];
        for (std::size_t e = 0; e < alpha.size(); ++e)
          acc[k][static_cast<std::size_t>(rec.entry_labels[e])] += alpha[e];
      }
    }
    tokens[s] = fwd.attention.size();
  });

  AttentionGraph graph;
  graph.threshold = threshold;
  graph.label_names = dataset.label_names;
  graph.adjacency.assign(m, std::vector<double>(m, 0.0));
  for (std::size_t s = 0; s < partial.size(); ++s) {
    graph.token_count += tokens[s];
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t q = 0; q < m; ++q) graph.adjacency[k][q] += partial[s][k][q];
  }
  const double norm = static_cast<double>(graph.token_count) * config.memory_depth;
  for (auto& row : graph.adjacency)
    for (double& v : row) v = norm > 0.0 ? v / norm : 0.0;

  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t q = 0; q < m; ++q)
      if (graph.adjacency[k][q] >= threshold)
        graph.edges.push_back({static_cast<int>(k), static_cast<int>(q), graph.adjacency[k][q]});
  std::stable_sort(graph.edges.begin(), graph.edges.end(),
                   [](const AttentionEdge& a, const AttentionEdge& b) { return a.weight > b.weight; });
  return graph;
}

namespace {

std::string node_name(const AttentionGraph& graph, int label) {
  if (!graph.label_names.empty()) return graph.label_names[static_cast<std::size_t>(label)];
  return std::to_string(label);
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

std::string attention_dot(const AttentionGraph& graph) {
  std::ostringstream out;
  out << "digraph attention {\n";
  for (std::size_t k = 0; k < graph.adjacency.size(); ++k)
    out << "  " << quoted(node_name(graph, static_cast<int>(k))) << ";\n";
  for (const AttentionEdge& e : graph.edges)
    out << "  " << quoted(node_name(graph, e.source)) << " -> " << quoted(node_name(graph, e.target))
        << " [weight=\"" << format_fixed(e.weight, 4) << "\"];\n";
  out << "}\n";
  return out.str();
}

json attention_json(const AttentionGraph& graph) {
  json edges = json::array();
  for (const AttentionEdge& e : graph.edges)
    edges.push_back({{"source", e.source}, {"target", e.target}, {"weight", e.weight}});
  json doc{{"threshold", graph.threshold},
           {"token_count", graph.token_count},
           {"adjacency", graph.adjacency},
           {"edges", edges}};
  if (!graph.label_names.empty()) doc["label_names"] = graph.label_names;
  return doc;
}

IntensityTrace intensity_trace(const ModelParams& params, const ModelConfig& config,
                               const EventStream& stream, int fakes) {
  params.check_shapes(config);
  stream.validate();
  const AugmentedSequence seq = augment(conform(stream, config), fakes);
  const ForwardResult fwd = forward(seq, params, config, false);
  IntensityTrace trace;
  trace.stream_id = stream.id;
  for (std::size_t i = 1; i < seq.tokens.size(); ++i) {
    const Token& tok = seq.tokens[i];
    for (int k = 0; k < config.label_count; ++k) {
      trace.points.push_back({tok.time, k, fwd.rates[i - 1][static_cast<std::size_t>(k)],
                              tok.kind == TokenKind::kReal && tok.label == k, tok.kind});
    }
  }
  return trace;
}

void write_trace_csv(const IntensityTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "time,label,lambda,is_real_event\n";
  for (const TracePoint& p : trace.points)
    out << format_double(p.time) << ',' << p.label << ',' << format_double(p.lambda) << ','
        << (p.is_real_event ? 1 : 0) << '\n';
}

double trace_sharpness(const IntensityTrace& trace) {
  double at_events = 0.0, at_fakes = 0.0;
  std::size_t n_events = 0, n_fakes = 0;
  for (const TracePoint& p : trace.points) {
    if (p.is_real_event) {
      at_events += p.lambda;
      ++n_events;
    } else if (p.kind == TokenKind::kFake) {
      at_fakes += p.lambda;
      ++n_fakes;
    }
  }
  if (n_events == 0 || n_fakes == 0) throw DataError("sharpness needs real events and fake tokens");
  return (at_events / static_cast<double>(n_events)) / (at_fakes / static_cast<double>(n_fakes));
}

}  // namespace tppkit
