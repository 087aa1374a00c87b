#include "tppkit/augment.hpp"

#include <algorithm>

#include "tppkit/error.hpp"

namespace tppkit {

std::size_t AugmentedSequence::real_count() const {
  return static_cast<std::size_t>(std::count_if(
      tokens.begin(), tokens.end(), [](const Token& t) { return t.kind == TokenKind::kReal; }));
}

AugmentedSequence augment(const EventStream& stream, int fakes_per_gap) {
  if (fakes_per_gap < 0) throw DataError("fake count must be >= 0");
  AugmentedSequence seq;
  seq.horizon = stream.horizon;
  seq.label_count = stream.label_count;
  seq.fakes_per_gap = fakes_per_gap;
  const int fake = stream.label_count;
  seq.tokens.reserve((stream.epochs.size() + 1) * static_cast<std::size_t>(fakes_per_gap + 1) + 1);

  auto fill_gap = [&](double left, double right) {
    if (!(right > left)) return;
    const double step = (right - left) / static_cast<double>(fakes_per_gap + 1);
    for (int j = 1; j <= fakes_per_gap; ++j)
      seq.tokens.push_back({left + j * step, fake, TokenKind::kFake});
  };

  seq.tokens.push_back({0.0, fake, TokenKind::kBos});
  double prev = 0.0;
  for (const Epoch& e : stream.epochs) {
    fill_gap(prev, e.time);
    seq.tokens.push_back({e.time, e.label, TokenKind::kReal});
    prev = e.time;
  }
  fill_gap(prev, stream.horizon);
  seq.tokens.push_back({stream.horizon, fake, TokenKind::kEos});
  return seq;
}

EventStream real_events(const AugmentedSequence& seq) {
  EventStream s;
  s.horizon = seq.horizon;
  s.label_count = seq.label_count;
  for (const Token& t : seq.tokens)
    if (t.kind == TokenKind::kReal) s.epochs.push_back({t.time, t.label});
  return s;
}

}  // namespace tppkit
