#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "support/oracles.hpp"
#include "tppkit/error.hpp"
#include "tppkit/pgem.hpp"
#include "tppkit/training.hpp"

using namespace tppkit;
using tppkit::testing::central_difference;
using tppkit::testing::random_stream;
using tppkit::testing::relative_error;

namespace {

using Rates = std::vector<std::vector<double>>;

Rates constant_rates(const AugmentedSequence& seq, double rate) {
  return Rates(seq.size() - 1, std::vector<double>(static_cast<std::size_t>(seq.label_count + 1), rate));
}

// Rates a PGEM assigns just before each token.
Rates pgem_rates(const PgemSpec& spec, const EventStream& s, const AugmentedSequence& seq) {
  const PgemHistory history(spec, s);
  Rates out;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    auto r = history.rates_at(seq.tokens[i].time);
    r.push_back(1.0);
    out.push_back(r);
  }
  return out;
}

double oracle_cross_entropy(const AugmentedSequence& seq, const Rates& rates) {
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const Token& t = seq.tokens[i];
    if (t.kind == TokenKind::kEos) continue;
    const auto& r = rates[i - 1];
    const std::size_t target = t.kind == TokenKind::kReal ? static_cast<std::size_t>(t.label) : r.size() - 1;
    double top = r[0];
    for (double v : r) top = std::max(top, v);
    double z = 0.0;
    for (double v : r) z += std::exp(v - top);
    total += -(r[target] - top - std::log(z));
    ++count;
  }
  return count ? total / count : 0.0;
}

ModelConfig toy_config(int labels) {
  ModelConfig c;
  c.label_count = labels;
  c.channel_width = 2;
  c.embed_dim = 3;
  c.memory_depth = 2;
  c.fake_count = 1;
  c.hidden_f1 = 4;
  c.time_scale = 10.0;
  return c;
}

Dataset toy_dataset(std::uint64_t seed, int streams, int labels, std::size_t events, double horizon) {
  Rng rng(seed);
  Dataset d;
  d.name = "toy";
  d.label_count = labels;
  for (int i = 0; i < streams; ++i)
    d.streams.push_back(random_stream(rng, labels, events, horizon, "s" + std::to_string(i)));
  return d;
}

}  // namespace

TEST_CASE("quadrature_ll with constant rates is the homogeneous closed form") {
  const EventStream s{"s", {{2.0, 0}, {5.0, 0}}, 10.0, 1};
  const double expected = 2.0 * std::log(0.1) - 0.1 * 10.0;
  for (int k : {0, 1, 3, 7}) {
    const AugmentedSequence seq = augment(s, k);
    const double ll = quadrature_ll(seq, constant_rates(seq, 0.1));
    CHECK(ll == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ll == doctest::Approx(-5.605170).epsilon(1e-6));
  }
  PgemSpec spec;
  spec.label_count = 1;
  spec.nodes.push_back({{}, {}, {0.1}});
  CHECK(quadrature_ll(augment(s, 0), constant_rates(augment(s, 0), 0.1)) ==
        doctest::Approx(*exact_ll(spec, s)).epsilon(1e-12));
}

TEST_CASE("quadrature_ll ignores the fake channel and rejects bad inputs") {
  const EventStream s{"s", {{2.0, 0}, {5.0, 1}}, 10.0, 2};
  const AugmentedSequence seq = augment(s, 1);
  Rates a = constant_rates(seq, 0.2);
  Rates b = a;
  for (auto& r : b) r[2] = 17.0;
  CHECK(quadrature_ll(seq, a) == quadrature_ll(seq, b));
  CHECK_THROWS_AS(quadrature_ll(seq, Rates(2, {0.1, 0.1, 0.1})), ShapeError);
  a[1][0] = 0.0;  // token 2 is the real event with label 0
  CHECK_THROWS_AS(quadrature_ll(seq, a), NumericError);
}

TEST_CASE("quadrature with PGEM rates and 20 fakes is within 1% of exact_ll") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PgemSpec spec = sample_spec(5, seed);
    const EventStream s = simulate(spec, 1000.0, seed + 40);
    const double exact = *exact_ll(spec, s);
    const AugmentedSequence seq = augment(s, 20);
    INFO("seed " << seed);
    CHECK(std::abs(quadrature_ll(seq, pgem_rates(spec, s, seq)) - exact) < 0.01 * std::abs(exact));
  }
}

TEST_CASE("prediction_loss examples") {
  const EventStream s{"s", {{2.0, 0}, {5.0, 2}}, 10.0, 3};
  const AugmentedSequence seq = augment(s, 2);
  CHECK(prediction_loss(seq, constant_rates(seq, 0.7)) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Rates sharp = constant_rates(seq, 0.0);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const Token& t = seq.tokens[i];
    sharp[i - 1][static_cast<std::size_t>(t.kind == TokenKind::kReal ? t.label : 3)] = 60.0;
  }
  CHECK(prediction_loss(seq, sharp) < 1e-20);

  CHECK(prediction_loss(augment(EventStream{"e", {}, 1.0, 3}, 0), Rates(1, {1, 2, 3, 4})) == 0.0);
}

TEST_CASE("property: prediction_loss equals a scalar cross-entropy") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int labels = 1 + static_cast<int>(rng.uniform_index(4));
    const AugmentedSequence seq =
        augment(random_stream(rng, labels, rng.uniform_index(8), 10.0), static_cast<int>(rng.uniform_index(3)));
    Rates rates(seq.size() - 1);
    for (auto& r : rates)
      for (int k = 0; k <= labels; ++k) r.push_back(rng.uniform(0.001, 5.0));
    CHECK(std::abs(prediction_loss(seq, rates) - oracle_cross_entropy(seq, rates)) < 1e-12);
  }
}

TEST_CASE("weight_penalty examples and gradient") {
  ModelConfig c = toy_config(1);
  c.hidden_f1 = 2;
  ModelParams p = ModelParams::zeros(c);
  CHECK(weight_penalty(p) == 0.0);
  p.f2_w = Tensor::matrix(1, 2, {3, 4});
  CHECK(weight_penalty(p) == 25.0);
  p.f1_b.fill(9.0);
  p.f2_b.fill(9.0);
  CHECK(weight_penalty(p) == 25.0);

  p = ModelParams::init(c, 3);
  ad::Tape tape;
  const ParamVars vars = ParamVars::bind(tape, p);
  tape.backward(weight_penalty(vars));
  const auto fd = central_difference([&] { return weight_penalty(p); }, p.f1_w.data());
  CHECK(relative_error(vars.f1_w.grad().data(), fd) < 1e-8);
  for (std::size_t i = 0; i < p.f1_w.size(); ++i) CHECK(vars.f1_w.grad()[i] == 2.0 * p.f1_w[i]);
  for (std::size_t i = 0; i < p.f2_w.size(); ++i) CHECK(vars.f2_w.grad()[i] == 2.0 * p.f2_w[i]);
  for (double g : vars.f1_b.grad().data()) CHECK(g == 0.0);
}

TEST_CASE("objective reduces to the log-likelihood and falls with lambda_w") {
  ModelConfig c = toy_config(2);
  const ModelParams p = ModelParams::init(c, 5);
  const AugmentedSequence seq = augment(EventStream{"s", {{1.0, 0}, {4.0, 1}, {6.0, 0}}, 10.0, 2}, 1);
  c.lambda_p = 0.0;
  c.lambda_w = 0.0;
  const ObjectiveTerms bare = objective(seq, p, c);
  CHECK(bare.objective == quadrature_ll(seq, forward(seq, p, c, false).rates));
  CHECK(bare.objective == bare.ll);

  c.lambda_p = 0.5;
  double previous = std::numeric_limits<double>::infinity();
  for (double lw : {0.0, 0.01, 0.1, 1.0}) {
    c.lambda_w = lw;
    const ObjectiveTerms t = objective(seq, p, c);
    CHECK(t.objective < previous);
    CHECK(t.objective == doctest::Approx(t.ll - 0.5 * t.prediction - lw * t.penalty).epsilon(1e-14));
    previous = t.objective;
  }
}

TEST_CASE("objective gradient matches finite differences") {
  ModelConfig c = toy_config(2);
  c.lambda_p = 0.7;
  c.lambda_w = 0.05;
  ModelParams p = ModelParams::init(c, 6);
  const AugmentedSequence seq = augment(EventStream{"s", {{1.0, 0}, {2.0, 1}, {6.0, 1}}, 10.0, 2}, 1);
  REQUIRE(seq.size() <= 10);
  const ObjectiveGradient og = objective_gradient(seq, p, c);
  CHECK(og.terms.objective == objective(seq, p, c).objective);
  const auto mine = p.tensors();
  const auto grads = og.grad.tensors();
  for (std::size_t t = 0; t < ModelParams::kTensorCount; ++t) {
    INFO(ModelParams::names()[t]);
    const auto fd = central_difference([&] { return objective(seq, p, c).objective; }, mine[t]->data());
    CHECK(relative_error(grads[t]->data(), fd) < 1e-4);
  }
}

TEST_CASE("training is deterministic and thread-count independent") {
  const Dataset d = toy_dataset(7, 4, 2, 6, 10.0);
  const ModelConfig c = toy_config(2);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 4;
  tc.learning_rate = 1e-2;
  tc.record_timing = false;
  const TrainResult a = train(d, nullptr, c, tc);
  const TrainResult b = train(d, nullptr, c, tc);
  CHECK(a.params == b.params);
  tc.threads = 4;
  const TrainResult threaded = train(d, nullptr, c, tc);
  CHECK(threaded.params == a.params);
  CHECK(a.report.steps == 3);
  CHECK(a.report.epochs.size() == 3);
  CHECK(a.config.time_scale == 10.0);
  CHECK(std::isnan(a.report.epochs[0].val_ll));

  tc.seed = 2;
  CHECK_FALSE(train(d, nullptr, c, tc).params == a.params);
}

TEST_CASE("smoke: the objective climbs on a 10-event toy") {
  const Dataset d = toy_dataset(8, 1, 2, 10, 20.0);
  TrainConfig tc;
  tc.epochs = 60;
  tc.learning_rate = 1e-3;
  tc.record_timing = false;
  const TrainResult r = train(d, nullptr, toy_config(2), tc);
  const auto& e = r.report.epochs;
  for (std::size_t i = 1; i < e.size(); ++i)
    CHECK(e[i].objective >= e[i - 1].objective - 0.01 * std::abs(e[i - 1].objective));
  CHECK(e.back().objective > e.front().objective);
}

TEST_CASE("early stopping keeps the best validation epoch") {
  const Dataset d = toy_dataset(9, 3, 2, 8, 10.0);
  const Dataset v = toy_dataset(10, 2, 2, 8, 10.0);
  TrainConfig tc;
  tc.epochs = 12;
  tc.patience = 2;
  tc.learning_rate = 0.05;
  tc.record_timing = false;
  const TrainResult r = train(d, &v, toy_config(2), tc);
  REQUIRE(r.report.best_epoch >= 1);
  double best = -std::numeric_limits<double>::infinity();
  for (const EpochStats& e : r.report.epochs) best = std::max(best, e.val_ll);
  CHECK(r.report.epochs[static_cast<std::size_t>(r.report.best_epoch - 1)].val_ll == best);
  double val = 0.0;
  for (const EventStream& s : v.streams) {
    const AugmentedSequence seq = augment(s, r.config.fake_count);
    val += quadrature_ll(seq, forward(seq, r.params, r.config, false).rates);
  }
  CHECK(val == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("train rejects bad configs and mismatched data") {
  const Dataset d = toy_dataset(11, 2, 2, 4, 10.0);
  TrainConfig tc;
  tc.epochs = 0;
  CHECK_THROWS_AS(train(d, nullptr, toy_config(2), tc), DataError);
  tc.epochs = 1;
  CHECK_THROWS_AS(train(d, nullptr, toy_config(3), tc), DataError);
  tc.learning_rate = -1.0;
  CHECK_THROWS_AS(train(d, nullptr, toy_config(2), tc), DataError);
}

TEST_CASE("report CSV layout") {
  TrainReport report;
  report.epochs.push_back({1, -3.5, -3.0, std::numeric_limits<double>::quiet_NaN(), 0.0});
  report.epochs.push_back({2, -2.5, -2.25, -1.5, 1.25});
  const auto path = std::filesystem::temp_directory_path() / "tppkit_test_report.csv";
  write_report_csv(report, path);
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  CHECK(text.str() == "epoch,objective,train_ll,val_ll,seconds\n1,-3.5,-3,nan,0.000\n2,-2.5,-2.25,-1.5,1.250\n");
}
