#include "tppkit/event_stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "tppkit/error.hpp"
#include "tppkit/numfmt.hpp"
#include "tppkit/rng.hpp"

namespace tppkit {

namespace fs = std::filesystem;
using nlohmann::json;

void EventStream::validate() const {
  if (!std::isfinite(horizon) || horizon < 0.0)
    throw DataError("stream '" + id + "': horizon must be finite and >= 0");
  if (label_count < 1) throw DataError("stream '" + id + "': label_count must be >= 1");
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const Epoch& e = epochs[i];
    if (!std::isfinite(e.time) || e.time < 0.0)
      throw DataError("stream '" + id + "': epoch " + std::to_string(i) + " has invalid time");
    if (e.time > horizon)
      throw DataError("stream '" + id + "': epoch " + std::to_string(i) + " lies past the horizon");
    if (e.label < 0 || e.label >= label_count)
      throw DataError("stream '" + id + "': epoch " + std::to_string(i) + " label " +
                      std::to_string(e.label) + " out of range");
    if (i > 0 && !(epochs[i - 1].time < e.time))
      throw DataError("stream '" + id + "': times not strictly increasing at epoch " +
                      std::to_string(i));
  }
}

void Dataset::validate() const {
  if (streams.empty()) throw DataError("dataset '" + name + "' has no streams");
  if (!label_names.empty() && label_names.size() != static_cast<std::size_t>(label_count))
    throw DataError("dataset '" + name + "': label_names length differs from num_labels");
  std::set<std::string> ids;
  for (const EventStream& s : streams) {
    if (s.label_count != label_count)
      throw DataError("dataset '" + name + "': stream '" + s.id + "' has inconsistent label count");
    if (!ids.insert(s.id).second) throw DataError("dataset '" + name + "': duplicate stream id '" + s.id + "'");
    s.validate();
  }
}

std::size_t Dataset::event_count() const {
  std::size_t n = 0;
  for (const EventStream& s : streams) n += s.epochs.size();
  return n;
}

fs::path sidecar_path(const fs::path& csv_path) {
  fs::path p = csv_path;
  p.replace_extension(".meta.json");
  return p;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

struct Row {
  double time;
  int label;
  std::size_t line;
};

}  // namespace

Dataset load_dataset(const fs::path& csv_path) {
  if (!fs::is_regular_file(csv_path)) throw DataError("no such stream file '" + csv_path.string() + "'");
  const fs::path meta_path = sidecar_path(csv_path);
  std::ifstream meta_in(meta_path);
  if (!meta_in)
    throw DataError("missing metadata sidecar '" + meta_path.string() + "' for '" +
                    csv_path.string() + "'");
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    throw DataError("cannot parse metadata '" + meta_path.string() + "': " + e.what());
  }
  if (!meta.contains("num_labels") || !meta.contains("horizon"))
    throw DataError("metadata '" + meta_path.string() + "' needs num_labels and horizon");

  Dataset d;
  double horizon = 0.0;
  try {
    d.label_count = meta.at("num_labels").get<int>();
    horizon = meta.at("horizon").get<double>();
    if (meta.contains("label_names"))
      d.label_names = meta.at("label_names").get<std::vector<std::string>>();
    d.name = meta.value("name", csv_path.stem().string());
  } catch (const json::exception& e) {
    throw DataError("bad metadata '" + meta_path.string() + "': " + e.what());
  }
  if (d.label_count < 1) throw DataError("num_labels must be >= 1");
  if (!std::isfinite(horizon) || horizon < 0.0) throw DataError("horizon must be finite and >= 0");

  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open '" + csv_path.string() + "'");

  const std::string where = csv_path.string() + ":";
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(where + "1: missing header");
  ++line_no;
  if (strip(line) != "stream_id,time,label")
    throw DataError(where + "1: expected header 'stream_id,time,label'");

  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    const auto fields = split_fields(strip(line));
    const std::string at = where + std::to_string(line_no) + ": ";
    if (fields.size() != 3) throw DataError(at + "malformed row, expected 3 fields");
    const std::string sid = strip(fields[0]);
    if (sid.empty()) throw DataError(at + "empty stream_id");
    Row r{};
    r.line = line_no;
    try {
      r.time = parse_double(fields[1]);
      const long long label = parse_integer(fields[2]);
      if (label < 0 || label >= d.label_count)
        throw DataError("label " + std::to_string(label) + " outside [0, " +
                        std::to_string(d.label_count) + ")");
      r.label = static_cast<int>(label);
    } catch (const DataError& e) {
      throw DataError(at + e.what());
    }
    if (!std::isfinite(r.time) || r.time < 0.0) throw DataError(at + "time must be finite and >= 0");
    if (r.time > horizon)
      throw DataError(at + "time " + format_double(r.time) + " exceeds horizon " +
                      format_double(horizon));
    auto [it, inserted] = rows.try_emplace(sid);
    if (inserted) order.push_back(sid);
    it->second.push_back(r);
  }

  if (meta.contains("stream_ids")) {
    const auto listed = meta.at("stream_ids").get<std::vector<std::string>>();
    const std::set<std::string> known(listed.begin(), listed.end());
    for (const auto& sid : order)
      if (!known.count(sid))
        throw DataError(where + " stream '" + sid + "' is not listed in the metadata stream_ids");
    order = listed;
  }

  for (const std::string& sid : order) {
    EventStream s;
    s.id = sid;
    s.horizon = horizon;
    s.label_count = d.label_count;
    auto found = rows.find(sid);
    if (found != rows.end()) {
      auto& rs = found->second;
      std::stable_sort(rs.begin(), rs.end(),
                       [](const Row& a, const Row& b) { return a.time < b.time; });
      for (std::size_t i = 0; i < rs.size(); ++i) {
        if (i > 0 && rs[i].time == rs[i - 1].time)
          throw DataError(where + std::to_string(std::max(rs[i].line, rs[i - 1].line)) +
                          ": duplicate timestamp " + format_double(rs[i].time) + " in stream '" +
                          sid + "'");
        s.epochs.push_back({rs[i].time, rs[i].label});
      }
    }
    d.streams.push_back(std::move(s));
  }
  d.validate();
  return d;
}

void save_dataset(const Dataset& dataset, const fs::path& csv_path) {
  dataset.validate();
  const double horizon = dataset.streams.front().horizon;
  for (const EventStream& s : dataset.streams)
    if (s.horizon != horizon)
      throw DataError("save_dataset: streams must share one horizon");

  std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + csv_path.string() + "'");
  out << "stream_id,time,label\n";
  for (const EventStream& s : dataset.streams)
    for (const Epoch& e : s.epochs) out << s.id << ',' << format_double(e.time) << ',' << e.label << '\n';
  if (!out) throw DataError("write failed for '" + csv_path.string() + "'");

  json meta;
  meta["name"] = dataset.name;
  meta["num_labels"] = dataset.label_count;
  meta["horizon"] = horizon;
  if (!dataset.label_names.empty()) meta["label_names"] = dataset.label_names;
  std::vector<std::string> ids;
  for (const EventStream& s : dataset.streams) ids.push_back(s.id);
  meta["stream_ids"] = ids;
  const fs::path meta_path = sidecar_path(csv_path);
  std::ofstream mout(meta_path, std::ios::binary | std::ios::trunc);
  if (!mout) throw DataError("cannot write '" + meta_path.string() + "'");
  mout << meta.dump(2) << '\n';
}

std::pair<Dataset, Dataset> split_by_time(const Dataset& dataset, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DataError("split fraction must lie in (0, 1)");
  dataset.validate();
  Dataset train, test;
  for (Dataset* part : {&train, &test}) {
    part->label_count = dataset.label_count;
    part->label_names = dataset.label_names;
  }
  train.name = dataset.name + "-train";
  test.name = dataset.name + "-test";
  for (const EventStream& s : dataset.streams) {
    const double cut = fraction * s.horizon;
    EventStream a{s.id, {}, cut, s.label_count};
    EventStream b{s.id, {}, s.horizon - cut, s.label_count};
    for (const Epoch& e : s.epochs) {
      if (e.time < cut)
        a.epochs.push_back(e);
      else
        b.epochs.push_back({e.time - cut, e.label});
    }
    train.streams.push_back(std::move(a));
    test.streams.push_back(std::move(b));
  }
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> split_by_stream(const Dataset& dataset, double fraction,
                                            std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DataError("split fraction must lie in (0, 1)");
  dataset.validate();
  const std::size_t count = dataset.streams.size();
  if (count < 2)
    throw DataError("split_by_stream needs at least 2 streams; use split_by_time for a single stream");
  auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(count) - 1e-9));
  take = std::clamp<std::size_t>(take, 1, count - 1);

  std::vector<std::size_t> perm(count);
  for (std::size_t i = 0; i < count; ++i) perm[i] = i;
  Rng rng(seed);
  for (std::size_t i = count - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
  std::vector<bool> in_train(count, false);
  for (std::size_t i = 0; i < take; ++i) in_train[perm[i]] = true;

  Dataset train, test;
  for (Dataset* part : {&train, &test}) {
    part->label_count = dataset.label_count;
    part->label_names = dataset.label_names;
  }
  train.name = dataset.name + "-train";
  test.name = dataset.name + "-test";
  for (std::size_t i = 0; i < count; ++i)
    (in_train[i] ? train : test).streams.push_back(dataset.streams[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace tppkit
