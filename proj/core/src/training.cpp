#include "tppkit/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "tppkit/parallel.hpp"
#include "tppkit/error.hpp"
#include "tppkit/numfmt.hpp"
#include "tppkit/rng.hpp"

namespace tppkit {

namespace {

void check_alignment(const AugmentedSequence& seq, std::size_t rate_count) {
  if (seq.tokens.size() < 2) throw DataError("sequence needs BOS and EOS");
  if (rate_count != seq.tokens.size() - 1)
    throw ShapeError("expected " + std::to_string(seq.tokens.size() - 1) + " rate vectors, got " +
                     std::to_string(rate_count));
}

std::vector<ad::Var> bind_rates(ad::Tape& tape, std::span<const std::vector<double>> rates) {
  std::vector<ad::Var> vars;
  vars.reserve(rates.size());
  for (const auto& r : rates) vars.push_back(tape.leaf(Tensor::vector(r)));
  return vars;
}

ad::Var total(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  return terms.empty() ? tape.scalar(0.0) : ad::add_n(terms);
}

}  // namespace

ad::Var quadrature_ll(const AugmentedSequence& seq, std::span<const ad::Var> rates) {
  check_alignment(seq, rates.size());
  ad::Tape& tape = *rates.front().tape;
  const auto real_labels = static_cast<std::size_t>(seq.label_count);
  std::vector<ad::Var> logs, integrals;
  integrals.reserve(rates.size());
  for (std::size_t i = 1; i < seq.tokens.size(); ++i) {
    const Token& tok = seq.tokens[i];
    const ad::Var r = rates[i - 1];
    if (r.size() < real_labels) throw ShapeError("rate vector shorter than the label count");
    if (tok.kind == TokenKind::kReal) {
      const ad::Var own = ad::pick(r, static_cast<std::size_t>(tok.label));
      if (!(own.item() > 0.0))
        throw NumericError("non-positive rate " + std::to_string(own.item()) + " at real token " +
                           std::to_string(i));
      logs.push_back(ad::log(own));
    }
    const double dt = tok.time - seq.tokens[i - 1].time;
    if (dt != 0.0) integrals.push_back(ad::scale(ad::sum(ad::slice(r, 0, real_labels)), dt));
  }
  return total(tape, logs) - total(tape, integrals);
}

double quadrature_ll(const AugmentedSequence& seq, std::span<const std::vector<double>> rates) {
  check_alignment(seq, rates.size());
  ad::Tape tape;
  const auto vars = bind_rates(tape, rates);
  return quadrature_ll(seq, vars).item();
}

ad::Var prediction_loss(const AugmentedSequence& seq, std::span<const ad::Var> rates) {
  check_alignment(seq, rates.size());
  ad::Tape& tape = *rates.front().tape;
  std::vector<ad::Var> terms;
  for (std::size_t i = 1; i < seq.tokens.size(); ++i) {
    const Token& tok = seq.tokens[i];
    if (tok.kind == TokenKind::kEos) continue;
    const std::size_t target =
        tok.kind == TokenKind::kReal ? static_cast<std::size_t>(tok.label) : static_cast<std::size_t>(seq.label_count);
    if (target >= rates[i - 1].size()) throw ShapeError("rate vector lacks the fake channel");
    terms.push_back(ad::pick(ad::log_softmax(rates[i - 1]), target));
  }
  if (terms.empty()) return tape.scalar(0.0);
  return ad::scale(ad::add_n(terms), -1.0 / static_cast<double>(terms.size()));
}

double prediction_loss(const AugmentedSequence& seq, std::span<const std::vector<double>> rates) {
  check_alignment(seq, rates.size());
  ad::Tape tape;
  const auto vars = bind_rates(tape, rates);
  return prediction_loss(seq, vars).item();
}

ad::Var weight_penalty(const ParamVars& params) {
  return ad::sum(ad::square(params.f1_w)) + ad::sum(ad::square(params.f2_w));
}

double weight_penalty(const ModelParams& params) {
  double s = 0.0;
  for (double v : params.f1_w.data()) s += v * v;
  for (double v : params.f2_w.data()) s += v * v;
  return s;
}

namespace {

struct ObjectiveGraph {
  ad::Var objective, ll, prediction, penalty;
};

ObjectiveGraph build_objective(ad::Tape& tape, const AugmentedSequence& seq, const ParamVars& vars,
                               const ModelConfig& config) {
  const ForwardGraph fwd = forward_graph(tape, seq, vars, config);
  ObjectiveGraph g;
  g.ll = quadrature_ll(seq, fwd.rates);
  g.prediction = prediction_loss(seq, fwd.rates);
  g.penalty = weight_penalty(vars);
  g.objective =
      g.ll - ad::scale(g.prediction, config.lambda_p) - ad::scale(g.penalty, config.lambda_w);
  return g;
}

ObjectiveTerms terms_of(const ObjectiveGraph& g) {
  return {g.objective.item(), g.ll.item(), g.prediction.item(), g.penalty.item()};
}

}  // namespace

ObjectiveTerms objective(const AugmentedSequence& seq, const ModelParams& params,
                         const ModelConfig& config) {
  ad::Tape tape;
  const ParamVars vars = ParamVars::bind(tape, params);
  return terms_of(build_objective(tape, seq, vars, config));
}

ObjectiveGradient objective_gradient(const AugmentedSequence& seq, const ModelParams& params,
                                     const ModelConfig& config) {
  ad::Tape tape;
  const ParamVars vars = ParamVars::bind(tape, params);
  const ObjectiveGraph g = build_objective(tape, seq, vars, config);
  tape.backward(g.objective);
  return {terms_of(g), vars.grads()};
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DataError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw DataError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw DataError("Adam epsilon must be positive");
  if (!(clip_norm > 0.0)) throw DataError("clip norm must be positive");
  if (epochs < 1) throw DataError("epochs must be >= 1");
  if (batch < 1) throw DataError("batch must be >= 1");
  if (patience < 0) throw DataError("patience must be >= 0");
}

namespace {

double dataset_ll(const std::vector<AugmentedSequence>& seqs, const ModelParams& params,
                  const ModelConfig& config, int threads) {
  std::vector<double> lls(seqs.size());
  detail::parallel_for(seqs.size(), threads, [&](std::size_t i) {
    lls[i] = quadrature_ll(seqs[i], forward(seqs[i], params, config, false).rates);
  });
  double sum = 0.0;
  for (double v : lls) sum += v;
  return sum;
}

}  // namespace

TrainResult train(const Dataset& train_set, const Dataset* validation, ModelConfig config,
                  const TrainConfig& tc) {
  tc.validate();
  train_set.validate();
  if (train_set.label_count != config.label_count)
    throw DataError("training data has " + std::to_string(train_set.label_count) +
                    " labels, model config has " + std::to_string(config.label_count));
  if (validation != nullptr) {
    validation->validate();
    if (validation->label_count != config.label_count)
      throw DataError("validation data label count differs from the model's");
  }
  if (config.normalize_time) {
    double longest = 0.0;
    for (const EventStream& s : train_set.streams) longest = std::max(longest, s.horizon);
    config.time_scale = longest > 0.0 ? longest : 1.0;
  }
  config.validate();

  std::vector<AugmentedSequence> seqs;
  for (const EventStream& s : train_set.streams) seqs.push_back(augment(s, config.fake_count));
  std::vector<AugmentedSequence> val_seqs;
  if (validation != nullptr)
    for (const EventStream& s : validation->streams) val_seqs.push_back(augment(s, config.fake_count));

  TrainResult result;
  result.params = ModelParams::init(config, tc.seed);
  const std::size_t n_params = result.params.parameter_count();
  std::vector<double> moment1(n_params, 0.0), moment2(n_params, 0.0);
  std::vector<double> theta = result.params.flatten();

  Rng shuffle_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const bool early_stop = tc.patience > 0 && !val_seqs.empty();
  double best_val = -std::numeric_limits<double>::infinity();
  ModelParams best_params = result.params;
  int stale = 0;
  std::uint64_t step = 0;
  const auto batch = static_cast<std::size_t>(tc.batch);

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);

    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<ObjectiveGradient> grads(count);
      detail::parallel_for(count, tc.threads, [&](std::size_t j) {
        const std::size_t s = order[start + j];
        try {
          grads[j] = objective_gradient(seqs[s], result.params, config);
        } catch (const NumericError& e) {
          throw NumericError("stream '" + train_set.streams[s].id + "': " + e.what());
        }
        if (!std::isfinite(grads[j].terms.objective))
          throw NumericError("stream '" + train_set.streams[s].id + "': non-finite objective");
      });

      std::vector<double> g(n_params, 0.0);
      for (const ObjectiveGradient& og : grads) {
        stats.objective += og.terms.objective;
        stats.train_ll += og.terms.ll;
        const std::vector<double> flat = og.grad.flatten();
        for (std::size_t p = 0; p < n_params; ++p) g[p] += flat[p];
      }
      double norm = 0.0;
      for (double v : g) norm += v * v;
      norm = std::sqrt(norm);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient at epoch " + std::to_string(epoch));
      if (norm > tc.clip_norm)
        for (double& v : g) v *= tc.clip_norm / norm;

      ++step;
      const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < n_params; ++p) {
        moment1[p] = tc.beta1 * moment1[p] + (1.0 - tc.beta1) * g[p];
        moment2[p] = tc.beta2 * moment2[p] + (1.0 - tc.beta2) * g[p] * g[p];
        theta[p] += tc.learning_rate * (moment1[p] / c1) / (std::sqrt(moment2[p] / c2) + tc.epsilon);
      }
      result.params.assign(theta);
    }

    stats.val_ll = val_seqs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : dataset_ll(val_seqs, result.params, config, tc.threads);
    const auto elapsed = std::chrono::steady_clock::now() - started;
    stats.seconds = tc.record_timing ? std::chrono::duration<double>(elapsed).count() : 0.0;
    result.report.epochs.push_back(stats);

    if (early_stop) {
      if (stats.val_ll > best_val) {
        best_val = stats.val_ll;
        best_params = result.params;
        result.report.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= tc.patience) {
        break;
      }
    }
  }

  if (early_stop) {
    result.params = best_params;
  } else {
    result.report.best_epoch = result.report.epochs.back().epoch;
  }
  result.report.steps = step;
  result.config = config;
  return result;
}

void write_report_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "epoch,objective,train_ll,val_ll,seconds\n";
  for (const EpochStats& e : report.epochs) {
    out << e.epoch << ',' << format_double(e.objective) << ',' << format_double(e.train_ll) << ','
        << (std::isnan(e.val_ll) ? std::string("nan") : format_double(e.val_ll)) << ','
        << format_fixed(e.seconds, 3) << '\n';
  }
}

}  // namespace tppkit
