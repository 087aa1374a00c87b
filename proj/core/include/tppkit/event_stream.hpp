#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace tppkit {

// One event arrival.
struct Epoch {
  double time = 0.0;
  int label = 0;

  bool operator==(const Epoch&) const = default;
};

// Time-ordered labeled epochs on [0, horizon] over labels [0, label_count).
struct EventStream {
  std::string id;
  std::vector<Epoch> epochs;
  double horizon = 0.0;
  int label_count = 0;

  // Throws DataError unless times are finite, >= 0, strictly increasing,
  // <= horizon, and every label is in range.
  void validate() const;

  bool operator==(const EventStream&) const = default;
};

struct Dataset {
  std::string name;
  int label_count = 0;
  std::vector<std::string> label_names;  // empty or label_count entries
  std::vector<EventStream> streams;

  // Non-empty, consistent label_count, every stream valid, unique ids.
  void validate() const;
  std::size_t event_count() const;

  bool operator==(const Dataset&) const = default;
};

// `data.csv` -> `data.meta.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

// Reads `stream_id,time,label` rows plus the JSON sidecar
// {"num_labels": M, "horizon": T, "label_names": [...], "stream_ids": [...],
//  "name": "..."}. label_names, stream_ids and name are optional; stream_ids
// preserves stream order and streams that have no events.
// Errors carry the offending line number.
Dataset load_dataset(const std::filesystem::path& csv_path);

// Writes CSV and sidecar. All streams must share one horizon. Times use the
// shortest exact decimal form, so load_dataset(save_dataset(d)) == d.
void save_dataset(const Dataset& dataset, const std::filesystem::path& csv_path);

// Per stream: train keeps epochs with t < fraction*T on horizon fraction*T;
// test keeps the rest, shifted to start at 0, on horizon T - fraction*T.
std::pair<Dataset, Dataset> split_by_time(const Dataset& dataset, double fraction);

// Random ceil(fraction*S)-subset of streams (clamped to [1, S-1]) forms train.
// Streams keep their original relative order on both sides.
std::pair<Dataset, Dataset> split_by_stream(const Dataset& dataset, double fraction,
                                            std::uint64_t seed);

}  // namespace tppkit
