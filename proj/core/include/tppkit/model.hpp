#pragma once

// Multi-channel recurrent intensity model.
//
// One LSTM runs over the augmented token sequence with hidden size
// m*(M+1); channel k is the slice [k*m, (k+1)*m) of the hidden vector
// (channels 0..M-1 are the real labels, channel M the fake label). Before
// token i is consumed, every channel of the state after token i-1 attends
// over a memory bank of real-label slices from the J states preceding it,
// and a shared two-layer network maps [h_net_k, dt_i] to a positive rate.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tppkit/augment.hpp"
#include "tppkit/autodiff.hpp"
#include "tppkit/tensor.hpp"

namespace tppkit {

struct ModelConfig {
  int label_count = 1;    // M
  int channel_width = 8;  // m
  int embed_dim = 16;
  int memory_depth = 3;  // J
  int fake_count = 1;    // K
  int hidden_f1 = 32;
  double lambda_p = 1.0;
  double lambda_w = 1e-4;
  // Time features (token time stamps and dt) are divided by time_scale when
  // normalize_time is set. Training sets time_scale to the longest training
  // horizon.
  bool normalize_time = true;
  double time_scale = 1.0;
  // Snapshot the bank only after real tokens instead of after every token.
  bool bank_real_only = false;

  int channels() const { return label_count + 1; }
  int hidden_size() const { return channel_width * channels(); }
  int input_size() const { return embed_dim + 1; }
  double time_feature(double t) const { return normalize_time ? t / time_scale : t; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& doc);

struct ModelParams {
  Tensor embedding;  // (M+1) x E
  Tensor lstm_w;     // 4H x (E+1+H); gate row blocks i, f, g, o
  Tensor lstm_b;     // 4H
  Tensor attn_w;     // m x 2m over [context, h_k]
  Tensor f1_w;       // F x (m+1) over [h_net_k, dt]
  Tensor f1_b;       // F
  Tensor f2_w;       // 1 x F
  Tensor f2_b;       // 1

  static constexpr std::size_t kTensorCount = 8;
  static const std::array<const char*, kTensorCount>& names();

  static ModelParams zeros(const ModelConfig& config);
  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); forget-gate bias 1.0.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Fixed order: embedding, lstm_w, lstm_b, attn_w, f1_w, f1_b, f2_w, f2_b.
  std::array<Tensor*, kTensorCount> tensors();
  std::array<const Tensor*, kTensorCount> tensors() const;

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  bool all_finite() const;
  // Throws ShapeError when shapes disagree with the config.
  void check_shapes(const ModelConfig& config) const;

  bool operator==(const ModelParams&) const = default;
};

// Parameters bound to a tape as leaves.
struct ParamVars {
  ad::Var embedding, lstm_w, lstm_b, attn_w, f1_w, f1_b, f2_w, f2_b;

  static ParamVars bind(ad::Tape& tape, const ModelParams& params);
  // Leaf grads gathered into a ModelParams-shaped container.
  ModelParams grads() const;
};

struct LstmState {
  ad::Var h;  // m(M+1)
  ad::Var c;  // m(M+1)
};

LstmState initial_state(ad::Tape& tape, const ModelConfig& config);

// The J most recent snapshots of the M real-label channel slices, oldest first.
class MemoryBank {
 public:
  struct Entry {
    ad::Var slice;
    int step;   // token index the snapshot was taken after
    int label;  // channel the slice came from
  };

  MemoryBank(const ModelConfig& config);

  void push(ad::Var hidden, int step);
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  std::span<const Entry> entries() const { return entries_; }
  // Entries stacked as an (n x m) matrix; built once per push.
  ad::Var matrix() const;

 private:
  int depth_;
  int label_count_;
  int width_;
  std::vector<Entry> entries_;
  mutable std::optional<ad::Var> matrix_;
};

// [embedding row, time feature]; BOS, EOS and FAKE use row M.
ad::Var encode_token(const Token& token, const ParamVars& params, const ModelConfig& config);

LstmState lstm_step(ad::Var x, const LstmState& state, const ParamVars& params,
                    const ModelConfig& config);

struct Attended {
  ad::Var h_net;
  std::vector<double> alpha;  // one weight per bank entry; empty for an empty bank
};

// h_net = tanh(W_c [sum_m alpha_m h_m, h_k]), alpha = softmax(bank * h_k).
Attended attend(ad::Var h_k, const MemoryBank& bank, const ParamVars& params,
                const ModelConfig& config);

// softplus(f2 relu(f1 [h_net, dt] + b1) + b2)
ad::Var intensity(ad::Var h_net, double dt, const ParamVars& params, const ModelConfig& config);

struct AttentionRecord {
  std::vector<int> entry_labels;
  std::vector<int> entry_steps;
  std::vector<std::vector<double>> alpha;  // per channel 0..M, over entries
};

struct ForwardGraph {
  std::vector<ad::Var> rates;  // token i >= 1 -> (M+1) rates
  std::vector<AttentionRecord> attention;
};

ForwardGraph forward_graph(ad::Tape& tape, const AugmentedSequence& seq, const ParamVars& params,
                           const ModelConfig& config, bool record_attention = false);

struct ForwardResult {
  std::vector<std::vector<double>> rates;
  std::vector<AttentionRecord> attention;
};

ForwardResult forward(const AugmentedSequence& seq, const ModelParams& params,
                      const ModelConfig& config, bool record_attention = true);

}  // namespace tppkit
