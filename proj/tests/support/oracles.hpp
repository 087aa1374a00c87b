#pragma once

// Test-only reference computations. Nothing here calls the reverse-mode
// machinery it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tppkit/event_stream.hpp"
#include "tppkit/rng.hpp"
#include "tppkit/tensor.hpp"

namespace tppkit::testing {

// Central difference of f along every coordinate of x (x is restored).
inline std::vector<double> central_difference(const std::function<double()>& f,
                                              std::span<double> x, double h = 1e-5) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Stream with `n` distinct uniform event times on [0, horizon].
inline EventStream random_stream(Rng& rng, int labels, std::size_t n, double horizon,
                                 std::string id = "s0") {
  std::vector<double> times;
  while (times.size() < n) {
    times.push_back(rng.uniform(0.0, horizon));
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
  }
  EventStream s;
  s.id = std::move(id);
  s.horizon = horizon;
  s.label_count = labels;
  for (double t : times) s.epochs.push_back({t, static_cast<int>(rng.uniform_index(static_cast<std::size_t>(labels)))});
  return s;
}

}  // namespace tppkit::testing
