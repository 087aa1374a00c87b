#pragma once

#include <cstddef>
#include <vector>

#include "tppkit/event_stream.hpp"

namespace tppkit {

enum class TokenKind { kBos, kReal, kFake, kEos };

struct Token {
  double time = 0.0;
  int label = 0;  // real label, or label_count for BOS/FAKE/EOS
  TokenKind kind = TokenKind::kReal;

  bool operator==(const Token&) const = default;
};

// A stream interleaved with fake epochs and framed by BOS (t=0) and EOS (t=T).
// The fake label is label_count; BOS and EOS carry it too.
struct AugmentedSequence {
  std::vector<Token> tokens;
  double horizon = 0.0;
  int label_count = 0;
  int fakes_per_gap = 0;

  std::size_t size() const { return tokens.size(); }
  int fake_label() const { return label_count; }
  std::size_t real_count() const;
};

// Places `fakes_per_gap` fake tokens at t_left + j*(t_right - t_left)/(K+1),
// j = 1..K, inside every positive-length gap of BOS, t_1..t_N, EOS.
AugmentedSequence augment(const EventStream& stream, int fakes_per_gap);

// Strips sentinels and fakes.
EventStream real_events(const AugmentedSequence& seq);

}  // namespace tppkit
