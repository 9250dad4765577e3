#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stacktune/ops.hpp"
#include "stacktune/rng.hpp"
#include "stacktune/tensor.hpp"

namespace stacktune {

template <class T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
  bool no_decay = false;  // layer-norm gains and biases
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

enum class Init {
  Kaiming,     // normal(0, sqrt(2 / fan_in)), used by every task head
  BertNormal,  // normal(0, 0.02) truncated at 2 sigma, used by the encoder
};

/// Weight of shape [fan_in, fan_out] (or [rows, cols] for tables).
template <class T>
BasicTensor<T> init_weight(const Shape& shape, Init init, Rng& rng) {
  std::vector<T> values(numel(shape));
  const double fan_in = static_cast<double>(shape.front());
  for (auto& v : values) {
    v = static_cast<T>(init == Init::Kaiming ? rng.normal(0.0, std::sqrt(2.0 / fan_in))
                                             : rng.truncated_normal(0.0, 0.02));
  }
  return BasicTensor<T>::from(shape, std::move(values), true);
}

/// Boolean padding mask over [batch, seq]; 1 marks a real token.
struct SeqMask {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint8_t> real;

  static SeqMask all_real(std::size_t batch, std::size_t seq) {
    return SeqMask{batch, seq, std::vector<std::uint8_t>(batch * seq, 1)};
  }

  bool is_real(std::size_t b, std::size_t s) const { return real[b * seq + s] != 0; }

  bool has_padding() const {
    for (auto r : real) {
      if (!r) return true;
    }
    return false;
  }

  std::size_t length(std::size_t b) const {
    std::size_t n = 0;
    for (std::size_t s = 0; s < seq; ++s) n += is_real(b, s);
    return n;
  }
};

namespace nn {

/// 1 at padded positions, repeated over a trailing feature axis of width `width`.
inline std::vector<std::uint8_t> pad_fill_mask(const SeqMask& mask, std::size_t width) {
  std::vector<std::uint8_t> out(mask.batch * mask.seq * width);
  for (std::size_t i = 0; i < mask.batch * mask.seq; ++i) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * width), width,
                static_cast<std::uint8_t>(!mask.real[i]));
  }
  return out;
}

/// [batch * heads, rows, seq] mask hiding padded keys.
inline std::vector<std::uint8_t> key_pad_mask(const SeqMask& mask, std::size_t heads,
                                              std::size_t rows) {
  std::vector<std::uint8_t> out(mask.batch * heads * rows * mask.seq);
  std::size_t i = 0;
  for (std::size_t b = 0; b < mask.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t s = 0; s < mask.seq; ++s) out[i++] = !mask.is_real(b, s);
      }
    }
  }
  return out;
}

/// Constant [batch, seq, 1] tensor of real-token indicators.
template <class T>
BasicTensor<T> mask_tensor(const SeqMask& mask) {
  std::vector<T> v(mask.real.begin(), mask.real.end());
  return BasicTensor<T>::from(Shape{mask.batch, mask.seq, 1}, std::move(v));
}

/// Constant [batch, seq, 1] one-hot selecting the last (or first) real position.
template <class T>
BasicTensor<T> edge_selector(const SeqMask& mask, bool last) {
  std::vector<T> v(mask.batch * mask.seq, T(0));
  for (std::size_t b = 0; b < mask.batch; ++b) {
    std::size_t pick = 0;
    for (std::size_t s = 0; s < mask.seq; ++s) {
      if (mask.is_real(b, s)) {
        pick = s;
        if (!last) break;
      }
    }
    v[b * mask.seq + pick] = T(1);
  }
  return BasicTensor<T>::from(Shape{mask.batch, mask.seq, 1}, std::move(v));
}

/// Picks x[b, s, :] at the selector's position: [B, S, d] -> [B, d].
template <class T>
BasicTensor<T> select_positions(const BasicTensor<T>& x, const BasicTensor<T>& selector) {
  return sum(mul(x, selector), 1);
}

/// Max over the sequence axis, ignoring padded positions: [B, S, d] -> [B, d].
template <class T>
BasicTensor<T> masked_max_over_time(const BasicTensor<T>& x, const SeqMask& mask) {
  const auto fill = pad_fill_mask(mask, x.dim(-1));
  return max(masked_fill(x, fill, -std::numeric_limits<T>::infinity()), 1);
}

/// The [CLS] vector: position 0 of an encoder output, [B, S, h] -> [B, h].
template <class T>
BasicTensor<T> cls_vector(const BasicTensor<T>& enc) {
  return reshape(slice(enc, 1, 0, 1), Shape{enc.dim(0), enc.dim(2)});
}

}  // namespace nn

template <class T>
struct Linear {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Init init, Rng& rng)
      : weight(init_weight<T>(Shape{in, out}, init, rng)),
        bias(BasicTensor<T>::zeros(Shape{out}, true)) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add(matmul(x, weight), bias); }

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, false});
    out.push_back({prefix + ".bias", bias, false});
  }
};

template <class T>
struct LayerNorm {
  BasicTensor<T> gain;
  BasicTensor<T> bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim)
      : gain(BasicTensor<T>::full(Shape{dim}, T(1), true)),
        bias(BasicTensor<T>::zeros(Shape{dim}, true)) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gain, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gain", gain, true});
    out.push_back({prefix + ".bias", bias, true});
  }
};

/// Single-direction LSTM. Gates are computed from [x_t, h_{t-1}] by one affine
/// map in the order input, forget, candidate, output. Padded steps carry the
/// previous state forward unchanged.
template <class T>
struct Lstm {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Linear<T> gates;

  struct Output {
    BasicTensor<T> seq;    // [B, S, hidden], in input order
    BasicTensor<T> final;  // [B, hidden], state after the last processed real step
  };

  Lstm() = default;
  Lstm(std::size_t in, std::size_t hidden, Init init, Rng& rng)
      : input_dim(in), hidden_dim(hidden), gates(in + hidden, 4 * hidden, init, rng) {}

  Output run(const BasicTensor<T>& x, const SeqMask* mask, bool reverse) const {
    const std::size_t batch = x.dim(0), steps = x.dim(1), in = x.dim(2);
    if (in != input_dim) {
      throw ShapeError("lstm: expected input width " + std::to_string(input_dim) + ", got shape " +
                       shape_str(x.shape()));
    }
    const std::size_t h = hidden_dim;
    auto state_h = BasicTensor<T>::zeros(Shape{batch, h});
    auto state_c = BasicTensor<T>::zeros(Shape{batch, h});
    const bool masked = mask && mask->has_padding();
    std::vector<BasicTensor<T>> outputs(steps);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      auto xt = reshape(slice(x, 1, t, 1), Shape{batch, in});
      auto z = gates(concat<T>({xt, state_h}, 1));
      auto i_gate = sigmoid(slice(z, 1, 0, h));
      auto f_gate = sigmoid(slice(z, 1, h, h));
      auto cand = tanh(slice(z, 1, 2 * h, h));
      auto o_gate = sigmoid(slice(z, 1, 3 * h, h));
      auto c_next = add(mul(f_gate, state_c), mul(i_gate, cand));
      auto h_next = mul(o_gate, tanh(c_next));
      if (masked) {
        std::vector<T> keep(batch);
        for (std::size_t b = 0; b < batch; ++b) keep[b] = mask->is_real(b, t) ? T(1) : T(0);
        auto m = BasicTensor<T>::from(Shape{batch, 1}, keep);
        auto not_m = BasicTensor<T>::from(Shape{batch, 1}, [&] {
          std::vector<T> v(batch);
          for (std::size_t b = 0; b < batch; ++b) v[b] = T(1) - keep[b];
          return v;
        }());
        c_next = add(mul(c_next, m), mul(state_c, not_m));
        h_next = add(mul(h_next, m), mul(state_h, not_m));
      }
      state_c = c_next;
      state_h = h_next;
      outputs[t] = reshape(state_h, Shape{batch, 1, h});
    }
    return Output{concat<T>(outputs, 1), state_h};
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    gates.collect(out, prefix + ".gates");
  }
};

/// Forward and backward LSTMs with concatenated outputs.
template <class T>
struct BiLstm {
  Lstm<T> fwd;
  Lstm<T> bwd;

  struct Output {
    BasicTensor<T> seq;         // [B, S, 2 * hidden]
    BasicTensor<T> fwd_seq;     // [B, S, hidden]
    BasicTensor<T> bwd_seq;     // [B, S, hidden]
    BasicTensor<T> fwd_final;   // state at the last real position
    BasicTensor<T> bwd_final;   // state at the first position
  };

  BiLstm() = default;
  BiLstm(std::size_t in, std::size_t hidden, Init init, Rng& rng)
      : fwd(in, hidden, init, rng), bwd(in, hidden, init, rng) {}

  Output operator()(const BasicTensor<T>& x, const SeqMask* mask) const {
    auto f = fwd.run(x, mask, false);
    auto b = bwd.run(x, mask, true);
    return Output{concat<T>({f.seq, b.seq}, 2), f.seq, b.seq, f.final, b.final};
  }

  std::size_t hidden_dim() const { return fwd.hidden_dim; }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    fwd.collect(out, prefix + ".fwd");
    bwd.collect(out, prefix + ".bwd");
  }
};

/// Unmasked-in-both-directions multi-head self-attention; only padded keys
/// are hidden.
template <class T>
struct MultiHeadAttention {
  std::size_t dim = 0;
  std::size_t heads = 1;
  Linear<T> query, key, value, output;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d, std::size_t num_heads, Init init, Rng& rng)
      : dim(d),
        heads(num_heads),
        query(d, d, init, rng),
        key(d, d, init, rng),
        value(d, d, init, rng),
        output(d, d, init, rng) {
    if (num_heads == 0 || d % num_heads != 0) {
      throw Error("attention: dim " + std::to_string(d) + " not divisible by " +
                  std::to_string(num_heads) + " heads");
    }
  }

  /// x [B, S, d] -> [B, S, d]. When `probs_out` is given it receives the
  /// post-softmax attention weights [B * heads, S, S].
  BasicTensor<T> operator()(const BasicTensor<T>& x, const SeqMask& mask, double dropout_p,
                            Rng* rng, bool train, BasicTensor<T>* probs_out = nullptr) const {
    const std::size_t batch = x.dim(0), seq = x.dim(1);
    const std::size_t dh = dim / heads;
    auto split_heads = [&](const BasicTensor<T>& t) {
      auto r = transpose(reshape(t, Shape{batch, seq, heads, dh}), 1, 2);
      return reshape(r, Shape{batch * heads, seq, dh});
    };
    auto q = split_heads(query(x));
    auto k = split_heads(key(x));
    auto v = split_heads(value(x));
    auto scores = scale(bmm(q, transpose(k, 1, 2)), static_cast<T>(1.0 / std::sqrt(double(dh))));
    const auto hide = nn::key_pad_mask(mask, heads, seq);
    scores = masked_fill(scores, hide, -std::numeric_limits<T>::infinity());
    auto probs = softmax(scores, -1);
    if (probs_out) *probs_out = probs;
    probs = dropout(probs, dropout_p, rng, train);
    auto ctx = bmm(probs, v);
    ctx = transpose(reshape(ctx, Shape{batch, heads, seq, dh}), 1, 2);
    return output(reshape(ctx, Shape{batch, seq, dim}));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    query.collect(out, prefix + ".query");
    key.collect(out, prefix + ".key");
    value.collect(out, prefix + ".value");
    output.collect(out, prefix + ".output");
  }
};

/// Post-norm transformer block: attention and feed-forward sublayers, each
/// wrapped in dropout + residual + layer norm.
template <class T>
struct TransformerBlock {
  MultiHeadAttention<T> attention;
  LayerNorm<T> attention_norm;
  Linear<T> ffn_in;
  Linear<T> ffn_out;
  LayerNorm<T> ffn_norm;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ffn_dim, Init init, Rng& rng)
      : attention(dim, heads, init, rng),
        attention_norm(dim),
        ffn_in(dim, ffn_dim, init, rng),
        ffn_out(ffn_dim, dim, init, rng),
        ffn_norm(dim) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x, const SeqMask& mask, double dropout_p,
                            Rng* rng, bool train, BasicTensor<T>* probs_out = nullptr) const {
    auto a = attention(x, mask, dropout_p, rng, train, probs_out);
    auto h = attention_norm(add(x, dropout(a, dropout_p, rng, train)));
    auto f = ffn_out(relu(ffn_in(h)));
    return ffn_norm(add(h, dropout(f, dropout_p, rng, train)));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    attention.collect(out, prefix + ".attention");
    attention_norm.collect(out, prefix + ".attention_norm");
    ffn_in.collect(out, prefix + ".ffn_in");
    ffn_out.collect(out, prefix + ".ffn_out");
    ffn_norm.collect(out, prefix + ".ffn_norm");
  }
};

template <class T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace stacktune
