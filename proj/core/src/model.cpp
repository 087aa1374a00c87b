#include "tppkit/model.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <string>

#include "tppkit/error.hpp"
#include "tppkit/rng.hpp"

namespace tppkit {

using nlohmann::json;

void ModelConfig::validate() const {
  if (label_count < 1) throw DataError("model: label_count must be >= 1");
  if (channel_width < 1) throw DataError("model: channel_width must be >= 1");
  if (embed_dim < 1) throw DataError("model: embed_dim must be >= 1");
  if (hidden_f1 < 1) throw DataError("model: hidden_f1 must be >= 1");
  if (memory_depth < 0) throw DataError("model: memory_depth must be >= 0");
  if (fake_count < 0) throw DataError("model: fake_count must be >= 0");
  if (!(lambda_p >= 0.0) || !(lambda_w >= 0.0)) throw DataError("model: lambda_p, lambda_w must be >= 0");
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) throw DataError("model: time_scale must be positive");
}

json config_to_json(const ModelConfig& c) {
  return {{"label_count", c.label_count},   {"channel_width", c.channel_width},
          {"embed_dim", c.embed_dim},       {"memory_depth", c.memory_depth},
          {"fake_count", c.fake_count},     {"hidden_f1", c.hidden_f1},
          {"lambda_p", c.lambda_p},         {"lambda_w", c.lambda_w},
          {"normalize_time", c.normalize_time}, {"time_scale", c.time_scale},
          {"bank_real_only", c.bank_real_only}};
}

ModelConfig config_from_json(const json& doc) {
  ModelConfig c;
  try {
    c.label_count = doc.at("label_count").get<int>();
    c.channel_width = doc.at("channel_width").get<int>();
    c.embed_dim = doc.at("embed_dim").get<int>();
    c.memory_depth = doc.at("memory_depth").get<int>();
    c.fake_count = doc.at("fake_count").get<int>();
    c.hidden_f1 = doc.at("hidden_f1").get<int>();
    c.lambda_p = doc.at("lambda_p").get<double>();
    c.lambda_w = doc.at("lambda_w").get<double>();
    c.normalize_time = doc.at("normalize_time").get<bool>();
    c.time_scale = doc.at("time_scale").get<double>();
    c.bank_real_only = doc.at("bank_real_only").get<bool>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

const std::array<const char*, ModelParams::kTensorCount>& ModelParams::names() {
  static const std::array<const char*, kTensorCount> kNames{
      "embedding", "lstm_w", "lstm_b", "attn_w", "f1_w", "f1_b", "f2_w", "f2_b"};
  return kNames;
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const auto c = static_cast<std::size_t>(config.channels());
  const auto e = static_cast<std::size_t>(config.embed_dim);
  const auto h = static_cast<std::size_t>(config.hidden_size());
  const auto m = static_cast<std::size_t>(config.channel_width);
  const auto f = static_cast<std::size_t>(config.hidden_f1);
  ModelParams p;
  p.embedding = Tensor(Shape{c, e});
  p.lstm_w = Tensor(Shape{4 * h, e + 1 + h});
  p.lstm_b = Tensor(Shape{4 * h});
  p.attn_w = Tensor(Shape{m, 2 * m});
  p.f1_w = Tensor(Shape{f, m + 1});
  p.f1_b = Tensor(Shape{f});
  p.f2_w = Tensor(Shape{1, f});
  p.f2_b = Tensor(Shape{1});
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  Rng rng(seed);
  auto fill = [&](Tensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
  };
  fill(p.embedding, p.embedding.rows());
  fill(p.lstm_w, p.lstm_w.cols());
  fill(p.lstm_b, p.lstm_w.cols());
  const auto h = static_cast<std::size_t>(config.hidden_size());
  for (std::size_t i = h; i < 2 * h; ++i) p.lstm_b[i] = 1.0;
  fill(p.attn_w, p.attn_w.cols());
  fill(p.f1_w, p.f1_w.cols());
  fill(p.f1_b, p.f1_w.cols());
  fill(p.f2_w, p.f2_w.cols());
  fill(p.f2_b, p.f2_w.cols());
  return p;
}

std::array<Tensor*, ModelParams::kTensorCount> ModelParams::tensors() {
  return {&embedding, &lstm_w, &lstm_b, &attn_w, &f1_w, &f1_b, &f2_w, &f2_b};
}

std::array<const Tensor*, ModelParams::kTensorCount> ModelParams::tensors() const {
  return {&embedding, &lstm_w, &lstm_b, &attn_w, &f1_w, &f1_b, &f2_w, &f2_b};
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Tensor* t : tensors()) flat.insert(flat.end(), t->data().begin(), t->data().end());
  return flat;
}

void ModelParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count())
    throw ShapeError("parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                     std::to_string(parameter_count()));
  std::size_t offset = 0;
  for (Tensor* t : tensors()) {
    for (double& v : t->data()) v = flat[offset++];
  }
}

bool ModelParams::all_finite() const {
  for (const Tensor* t : tensors())
    if (!t->all_finite()) return false;
  return true;
}

void ModelParams::check_shapes(const ModelConfig& config) const {
  const ModelParams ref = zeros(config);
  const auto mine = tensors();
  const auto theirs = ref.tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i)
    if (!(mine[i]->shape() == theirs[i]->shape()))
      throw ShapeError(std::string("parameter ") + names()[i] + " has shape " +
                       mine[i]->shape().to_string() + ", config expects " +
                       theirs[i]->shape().to_string());
}

ParamVars ParamVars::bind(ad::Tape& tape, const ModelParams& p) {
  return {tape.leaf(p.embedding), tape.leaf(p.lstm_w), tape.leaf(p.lstm_b), tape.leaf(p.attn_w),
          tape.leaf(p.f1_w),      tape.leaf(p.f1_b),   tape.leaf(p.f2_w),   tape.leaf(p.f2_b)};
}

ModelParams ParamVars::grads() const {
  return {embedding.grad(), lstm_w.grad(), lstm_b.grad(), attn_w.grad(),
          f1_w.grad(),      f1_b.grad(),   f2_w.grad(),   f2_b.grad()};
}

LstmState initial_state(ad::Tape& tape, const ModelConfig& config) {
  const auto h = static_cast<std::size_t>(config.hidden_size());
  return {tape.leaf(Tensor(Shape{h})), tape.leaf(Tensor(Shape{h}))};
}

MemoryBank::MemoryBank(const ModelConfig& config)
    : depth_(config.memory_depth),
      label_count_(config.label_count),
      width_(config.channel_width) {}

void MemoryBank::push(ad::Var hidden, int step) {
  if (depth_ == 0) return;
  for (int k = 0; k < label_count_; ++k)
    entries_.push_back({ad::slice(hidden, static_cast<std::size_t>(k * width_),
                                  static_cast<std::size_t>(width_)),
                        step, k});
  const auto cap = static_cast<std::size_t>(depth_ * label_count_);
  if (entries_.size() > cap)
    entries_.erase(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(entries_.size() - cap));
  matrix_.reset();
}

ad::Var MemoryBank::matrix() const {
  if (entries_.empty()) throw ShapeError("memory bank is empty");
  if (!matrix_) {
    std::vector<ad::Var> rows;
    rows.reserve(entries_.size());
    for (const Entry& e : entries_) rows.push_back(e.slice);
    matrix_ = ad::stack_rows(rows);
  }
  return *matrix_;
}

ad::Var encode_token(const Token& token, const ParamVars& params, const ModelConfig& config) {
  const int row = token.kind == TokenKind::kReal ? token.label : config.label_count;
  if (row < 0 || (token.kind == TokenKind::kReal && row >= config.label_count))
    throw DataError("token label " + std::to_string(token.label) + " outside the model's label set");
  const auto e = static_cast<std::size_t>(config.embed_dim);
  ad::Tape& tape = *params.embedding.tape;
  const std::array<ad::Var, 2> parts{
      ad::slice(params.embedding, static_cast<std::size_t>(row) * e, e),
      tape.scalar(config.time_feature(token.time))};
  return ad::concat(parts);
}

LstmState lstm_step(ad::Var x, const LstmState& state, const ParamVars& params,
                    const ModelConfig& config) {
  const auto h = static_cast<std::size_t>(config.hidden_size());
  const std::array<ad::Var, 2> input{x, state.h};
  const ad::Var z = ad::linear(params.lstm_w, ad::concat(input), params.lstm_b);
  const ad::Var in_gate = ad::sigmoid(ad::slice(z, 0, h));
  const ad::Var forget_gate = ad::sigmoid(ad::slice(z, h, h));
  const ad::Var candidate = ad::tanh(ad::slice(z, 2 * h, h));
  const ad::Var out_gate = ad::sigmoid(ad::slice(z, 3 * h, h));
  const ad::Var c = forget_gate * state.c + in_gate * candidate;
  return {out_gate * ad::tanh(c), c};
}

Attended attend(ad::Var h_k, const MemoryBank& bank, const ParamVars& params,
                const ModelConfig& config) {
  ad::Tape& tape = *h_k.tape;
  Attended out;
  ad::Var context;
  if (bank.empty()) {
    context = tape.leaf(Tensor(Shape{static_cast<std::size_t>(config.channel_width)}));
  } else {
    const ad::Var memory = bank.matrix();
    const ad::Var alpha = ad::softmax(ad::matvec(memory, h_k));
    context = ad::matvec_t(memory, alpha);
    const auto a = alpha.value().data();
    out.alpha.assign(a.begin(), a.end());
  }
  const std::array<ad::Var, 2> joined{context, h_k};
  out.h_net = ad::tanh(ad::matvec(params.attn_w, ad::concat(joined)));
  return out;
}

ad::Var intensity(ad::Var h_net, double dt, const ParamVars& params, const ModelConfig& config) {
  ad::Tape& tape = *h_net.tape;
  const std::array<ad::Var, 2> joined{h_net, tape.scalar(config.time_feature(dt))};
  const ad::Var hidden = ad::relu(ad::linear(params.f1_w, ad::concat(joined), params.f1_b));
  return ad::softplus(ad::linear(params.f2_w, hidden, params.f2_b));
}

ForwardGraph forward_graph(ad::Tape& tape, const AugmentedSequence& seq, const ParamVars& params,
                           const ModelConfig& config, bool record_attention) {
  const auto& tokens = seq.tokens;
  if (tokens.size() < 2 || tokens.front().kind != TokenKind::kBos ||
      tokens.back().kind != TokenKind::kEos)
    throw DataError("sequence must start with BOS and end with EOS");
  const auto m = static_cast<std::size_t>(config.channel_width);
  const int channels = config.channels();

  ForwardGraph out;
  out.rates.reserve(tokens.size() - 1);
  LstmState state = lstm_step(encode_token(tokens[0], params, config),
                              initial_state(tape, config), params, config);
  MemoryBank bank(config);
  std::vector<ad::Var> lambdas(static_cast<std::size_t>(channels));
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    try {
      const double dt = tokens[i].time - tokens[i - 1].time;
      AttentionRecord record;
      if (record_attention) {
        for (const auto& e : bank.entries()) {
          record.entry_labels.push_back(e.label);
          record.entry_steps.push_back(e.step);
        }
      }
      for (int k = 0; k < channels; ++k) {
        const ad::Var h_k = ad::slice(state.h, static_cast<std::size_t>(k) * m, m);
        Attended att = attend(h_k, bank, params, config);
        lambdas[static_cast<std::size_t>(k)] = intensity(att.h_net, dt, params, config);
        if (record_attention) record.alpha.push_back(std::move(att.alpha));
      }
      out.rates.push_back(ad::concat(lambdas));
      if (record_attention) out.attention.push_back(std::move(record));

      if (!config.bank_real_only || tokens[i - 1].kind == TokenKind::kReal)
        bank.push(state.h, static_cast<int>(i - 1));
      if (tokens[i].kind != TokenKind::kEos)
        state = lstm_step(encode_token(tokens[i], params, config), state, params, config);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at token " + std::to_string(i) + " (t=" +
                         std::to_string(tokens[i].time) + ")");
    }
  }
  return out;
}

ForwardResult forward(const AugmentedSequence& seq, const ModelParams& params,
                      const ModelConfig& config, bool record_attention) {
  ad::Tape tape;
  const ParamVars vars = ParamVars::bind(tape, params);
  ForwardGraph graph = forward_graph(tape, seq, vars, config, record_attention);
  ForwardResult out;
  out.rates.reserve(graph.rates.size());
  for (ad::Var r : graph.rates) out.rates.emplace_back(r.value().data().begin(), r.value().data().end());
  out.attention = std::move(graph.attention);
  return out;
}

}  // namespace tppkit
