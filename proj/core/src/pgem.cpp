#include "tppkit/pgem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>

#include "tppkit/error.hpp"
#include "tppkit/rng.hpp"

namespace tppkit {

using nlohmann::json;

namespace {

constexpr double kNever = -std::numeric_limits<double>::infinity();

std::uint32_t active_mask(const PgemNode& node, const std::vector<double>& last, double t) {
  // Active on (last, last + w]: the window [t' - w, t') still holds `last`.
  std::uint32_t mask = 0;
  for (std::size_t j = 0; j < node.parents.size(); ++j)
    if (last[static_cast<std::size_t>(node.parents[j])] + node.windows[j] > t) mask |= 1u << j;
  return mask;
}

}  // namespace

void PgemSpec::validate() const {
  if (label_count < 1) throw DataError("pgem: num_labels must be >= 1");
  if (nodes.size() != static_cast<std::size_t>(label_count))
    throw DataError("pgem: expected one node per label");
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const PgemNode& n = nodes[k];
    const std::string where = "pgem node " + std::to_string(k) + ": ";
    if (n.parents.size() > 20) throw DataError(where + "too many parents");
    if (n.windows.size() != n.parents.size()) throw DataError(where + "one window per parent");
    if (n.rates.size() != (std::size_t{1} << n.parents.size()))
      throw DataError(where + "rate table needs 2^|parents| entries");
    std::set<int> seen;
    for (int p : n.parents) {
      if (p < 0 || p >= label_count) throw DataError(where + "parent out of range");
      if (!seen.insert(p).second) throw DataError(where + "duplicate parent");
    }
    for (double w : n.windows)
      if (!(w > 0.0) || !std::isfinite(w)) throw DataError(where + "windows must be positive");
    for (double r : n.rates)
      if (!(r > 0.0) || !std::isfinite(r)) throw DataError(where + "rates must be positive");
  }
}

PgemSpec sample_spec(int label_count, std::uint64_t seed, const PgemSampleConfig& config) {
  if (label_count < 1) throw DataError("sample_spec: label count must be >= 1");
  if (config.windows.empty()) throw DataError("sample_spec: empty window set");
  if (!(config.rate_min > 0.0 && config.rate_max >= config.rate_min))
    throw DataError("sample_spec: need 0 < rate_min <= rate_max");
  Rng rng(seed);
  PgemSpec spec;
  spec.label_count = label_count;
  const double log_lo = std::log(config.rate_min);
  const double log_hi = std::log(config.rate_max);
  for (int k = 0; k < label_count; ++k) {
    PgemNode node;
    const int cap = std::min(std::max(config.max_parents, 0), label_count - 1);
    const int count = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(cap) + 1));
    std::vector<int> pool;
    for (int q = 0; q < label_count; ++q)
      if (q != k) pool.push_back(q);
    for (int j = 0; j < count; ++j) {
      const std::size_t pick = j + rng.uniform_index(pool.size() - static_cast<std::size_t>(j));
      std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
      node.parents.push_back(pool[static_cast<std::size_t>(j)]);
    }
    for (int j = 0; j < count; ++j)
      node.windows.push_back(config.windows[rng.uniform_index(config.windows.size())]);
    node.rates.resize(std::size_t{1} << count);
    for (double& r : node.rates) r = std::exp(rng.uniform(log_lo, log_hi));
    spec.nodes.push_back(std::move(node));
  }
  return spec;
}

EventStream simulate(const PgemSpec& spec, double horizon, std::uint64_t seed,
                     std::string stream_id) {
  spec.validate();
  if (!(horizon >= 0.0) || !std::isfinite(horizon))
    throw DataError("simulate: horizon must be finite and >= 0");
  EventStream out;
  out.id = std::move(stream_id);
  out.horizon = horizon;
  out.label_count = spec.label_count;
  if (horizon == 0.0) return out;

  Rng rng(seed);
  const std::size_t m = spec.nodes.size();
  std::vector<double> last(m, kNever);
  std::vector<double> rates(m);
  double t = 0.0;
  while (t < horizon) {
    double change = horizon;
    for (std::size_t k = 0; k < m; ++k) {
      const PgemNode& node = spec.nodes[k];
      rates[k] = node.rates[active_mask(node, last, t)];
      for (std::size_t j = 0; j < node.parents.size(); ++j) {
        const double expiry = last[static_cast<std::size_t>(node.parents[j])] + node.windows[j];
        if (expiry > t) change = std::min(change, expiry);
      }
    }
    double best = std::numeric_limits<double>::infinity();
    int who = -1;
    for (std::size_t k = 0; k < m; ++k) {
      const double candidate = t + rng.exponential(rates[k]);
      if (candidate < best) {
        best = candidate;
        who = static_cast<int>(k);
      }
    }
    if (best < change) {
      if (best > t) {
        out.epochs.push_back({best, who});
        last[static_cast<std::size_t>(who)] = best;
        t = best;
      }
    } else {
      t = change;
    }
  }
  return out;
}

PgemHistory::PgemHistory(const PgemSpec& spec, const EventStream& stream)
    : spec_(&spec), times_by_label_(static_cast<std::size_t>(spec.label_count)) {
  if (stream.label_count != spec.label_count)
    throw DataError("stream label count differs from the PGEM's");
  for (const Epoch& e : stream.epochs) times_by_label_[static_cast<std::size_t>(e.label)].push_back(e.time);
}

bool PgemHistory::occurred_in(int label, double from, double to) const {
  const auto& ts = times_by_label_[static_cast<std::size_t>(label)];
  auto it = std::lower_bound(ts.begin(), ts.end(), to);  // first >= to
  if (it == ts.begin()) return false;
  return *std::prev(it) >= from;
}

double PgemHistory::rate_at(int node_index, double t) const {
  const PgemNode& node = spec_->nodes[static_cast<std::size_t>(node_index)];
  std::uint32_t mask = 0;
  for (std::size_t j = 0; j < node.parents.size(); ++j)
    if (occurred_in(node.parents[j], t - node.windows[j], t)) mask |= 1u << j;
  return node.rates[mask];
}

std::vector<double> PgemHistory::rates_at(double t) const {
  std::vector<double> out(spec_->nodes.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = rate_at(static_cast<int>(k), t);
  return out;
}

double ChangePointTrace::integral() const {
  double total = 0.0;
  for (const TraceSegment& s : segments) {
    double sum = 0.0;
    for (double r : s.rates) sum += r;
    total += (s.end - s.start) * sum;
  }
  return total;
}

ChangePointTrace build_trace(const PgemSpec& spec, const EventStream& stream) {
  const PgemHistory history(spec, stream);
  const double horizon = stream.horizon;
  std::vector<double> breaks{0.0, horizon};
  for (const Epoch& e : stream.epochs) {
    breaks.push_back(e.time);
    for (const PgemNode& node : spec.nodes)
      for (std::size_t j = 0; j < node.parents.size(); ++j)
        if (node.parents[j] == e.label) breaks.push_back(e.time + node.windows[j]);
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  ChangePointTrace trace;
  for (std::size_t i = 0; i + 1 < breaks.size() && breaks[i + 1] <= horizon; ++i) {
    const double a = breaks[i], b = breaks[i + 1];
    trace.segments.push_back({a, b, history.rates_at(0.5 * (a + b))});
  }
  return trace;
}

std::optional<double> exact_ll(const PgemSpec& spec, const EventStream& stream) {
  const PgemHistory history(spec, stream);
  double log_term = 0.0;
  for (const Epoch& e : stream.epochs) {
    const double rate = history.rate_at(e.label, e.time);
    if (!(rate > 0.0)) return std::nullopt;
    log_term += std::log(rate);
  }
  return log_term - build_trace(spec, stream).integral();
}

json pgem_to_json(const PgemSpec& spec) {
  json nodes = json::array();
  for (const PgemNode& n : spec.nodes) {
    json rates = json::object();
    const std::size_t width = n.parents.size();
    for (std::size_t mask = 0; mask < n.rates.size(); ++mask) {
      std::string key(width, '0');
      for (std::size_t j = 0; j < width; ++j)
        if (mask & (std::size_t{1} << j)) key[j] = '1';
      rates[key] = n.rates[mask];
    }
    nodes.push_back({{"parents", n.parents}, {"windows", n.windows}, {"rates", rates}});
  }
  return {{"num_labels", spec.label_count}, {"nodes", nodes}};
}

PgemSpec pgem_from_json(const json& doc) {
  PgemSpec spec;
  try {
    spec.label_count = doc.at("num_labels").get<int>();
    for (const json& jn : doc.at("nodes")) {
      PgemNode n;
      n.parents = jn.at("parents").get<std::vector<int>>();
      n.windows = jn.at("windows").get<std::vector<double>>();
      const std::size_t width = n.parents.size();
      if (width > 20) throw DataError("pgem: too many parents");
      n.rates.assign(std::size_t{1} << width, std::numeric_limits<double>::quiet_NaN());
      for (const auto& [key, value] : jn.at("rates").items()) {
        if (key.size() != width) throw DataError("pgem: bitmask '" + key + "' has wrong width");
        std::size_t mask = 0;
        for (std::size_t j = 0; j < width; ++j) {
          if (key[j] == '1')
            mask |= std::size_t{1} << j;
          else if (key[j] != '0')
            throw DataError("pgem: bitmask '" + key + "' is not binary");
        }
        n.rates[mask] = value.get<double>();
      }
      spec.nodes.push_back(std::move(n));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("pgem: bad spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

void save_pgem(const PgemSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << pgem_to_json(spec).dump(2) << '\n';
}

PgemSpec load_pgem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DataError("cannot parse '" + path.string() + "': " + e.what());
  }
  return pgem_from_json(doc);
}

}  // namespace tppkit
