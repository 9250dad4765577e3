#pragma once

#include <array>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stacktune/nn.hpp"
#include "stacktune/ops.hpp"
#include "stacktune/rng.hpp"

namespace stacktune {

enum class HeadKind {
  FcToken,
  FcCls,
  BiLstmTagger,
  DenseNetCls,
  HighwayLstmCls,
  Bimpm,
  BimpmNoFirstLstm,
  SimTransformer,
};

inline const std::vector<HeadKind>& all_head_kinds() {
  static const std::vector<HeadKind> kinds{HeadKind::FcToken,        HeadKind::FcCls,
                                           HeadKind::BiLstmTagger,   HeadKind::DenseNetCls,
                                           HeadKind::HighwayLstmCls, HeadKind::Bimpm,
                                           HeadKind::BimpmNoFirstLstm, HeadKind::SimTransformer};
  return kinds;
}

inline const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::FcToken: return "fc-token";
    case HeadKind::FcCls: return "fc-cls";
    case HeadKind::BiLstmTagger: return "bilstm-tagger";
    case HeadKind::DenseNetCls: return "densenet-cls";
    case HeadKind::HighwayLstmCls: return "highway-lstm-cls";
    case HeadKind::Bimpm: return "bimpm";
    case HeadKind::BimpmNoFirstLstm: return "bimpm-no-first-lstm";
    case HeadKind::SimTransformer: return "sim-transformer";
  }
  return "?";
}

inline HeadKind parse_head_kind(const std::string& s) {
  for (HeadKind k : all_head_kinds()) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown head '" + s + "'");
}

/// Per-token heads emit [B, S, C]; all others emit [B, C].
inline bool is_token_head(HeadKind k) { return k == HeadKind::FcToken || k == HeadKind::BiLstmTagger; }

/// Pair heads take two separately encoded sentences.
inline bool is_pair_head(HeadKind k) {
  return k == HeadKind::Bimpm || k == HeadKind::BimpmNoFirstLstm || k == HeadKind::SimTransformer;
}

/// The light heads used by the finetune-only strategy.
inline bool is_light_head(HeadKind k) { return k == HeadKind::FcToken || k == HeadKind::FcCls; }

struct HeadSpec {
  HeadKind kind = HeadKind::FcCls;
  int num_classes = 2;
  int hidden = 0;            // FC hidden width and Sim-Transformer width; 0 = encoder width
  int lstm_hidden = 0;       // per direction; 0 = half the input width (highway: full width)
  int perspectives = 8;      // matching perspectives
  int attention_heads = 2;   // Sim-Transformer
  int fc_layers = 2;         // fc-token / fc-cls: 1 or 2 affine layers
  double dropout_p = 0.1;

  void validate() const {
    auto fail = [](const std::string& what) { throw Error("head spec: " + what); };
    if (num_classes < 2) fail("num_classes must be at least 2");
    if (hidden < 0 || lstm_hidden < 0) fail("sizes must be non-negative");
    if (perspectives < 1) fail("perspectives must be at least 1");
    if (attention_heads < 1) fail("attention_heads must be at least 1");
    if (fc_layers != 1 && fc_layers != 2) fail("fc_layers must be 1 or 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
  }
};

/// Encoder outputs handed to a head. Pair heads also read the `_b` fields.
template <class T>
struct HeadInput {
  BasicTensor<T> enc;  // [B, S, h]
  SeqMask mask;
  BasicTensor<T> enc_b;
  SeqMask mask_b;
};

/// Optional diagnostics filled during a forward pass.
template <class T>
struct HeadTrace {
  std::vector<BasicTensor<T>> attention;  // Sim-Transformer attention weights
};

template <class T>
class Head {
 public:
  explicit Head(HeadSpec spec) : spec_(std::move(spec)) {}
  virtual ~Head() = default;

  const HeadSpec& spec() const { return spec_; }

  virtual BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng,
                                 HeadTrace<T>* trace = nullptr) const = 0;
  virtual ParamList<T> params() const = 0;

 protected:
  HeadSpec spec_;
};

// ---------------------------------------------------------------------------
// Building blocks

/// Two affine layers with relu and dropout between them, or one affine layer.
template <class T>
struct FcStack {
  Linear<T> first;
  Linear<T> second;
  bool two_layers = true;
  double dropout_p = 0.0;

  FcStack() = default;
  FcStack(std::size_t in, std::size_t hidden, std::size_t out, bool two, double p, Rng& rng)
      : two_layers(two), dropout_p(p) {
    if (two) {
      first = Linear<T>(in, hidden, Init::Kaiming, rng);
      second = Linear<T>(hidden, out, Init::Kaiming, rng);
    } else {
      first = Linear<T>(in, out, Init::Kaiming, rng);
    }
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x, bool train, Rng* rng) const {
    if (!two_layers) return first(x);
    return second(dropout(relu(first(x)), dropout_p, rng, train));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    first.collect(out, prefix + ".fc1");
    if (two_layers) second.collect(out, prefix + ".fc2");
  }
};

/// Four cosine matching strategies between two sequences.
enum class MatchStrategy { Full = 0, MaxPool = 1, Attentive = 2, MaxAttentive = 3 };

/// Perspective weights W[direction][strategy], each [perspectives, dim].
/// With `split_directions` the inputs are forward/backward states side by
/// side and each direction matches its own half; otherwise both directions
/// see the whole vector and differ only in their weights and in the anchor
/// used by full matching (last position vs first position).
template <class T>
struct MatchingLayerParams {
  std::size_t perspectives = 8;
  std::size_t input_dim = 0;
  bool split_directions = true;
  std::array<std::array<BasicTensor<T>, 4>, 2> weights;

  MatchingLayerParams() = default;
  MatchingLayerParams(std::size_t in_dim, std::size_t l, bool split, Rng& rng)
      : perspectives(l), input_dim(in_dim), split_directions(split) {
    if (l < 1) throw Error("matching: need at least one perspective");
    if (split && in_dim % 2 != 0) throw Error("matching: split directions need an even input width");
    for (auto& dir : weights) {
      for (auto& w : dir) w = init_weight<T>(Shape{l, direction_dim()}, Init::Kaiming, rng);
    }
  }

  std::size_t direction_dim() const { return split_directions ? input_dim / 2 : input_dim; }
  std::size_t output_dim() const { return 8 * perspectives; }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    static const char* names[4] = {"full", "maxpool", "attentive", "max_attentive"};
    for (std::size_t d = 0; d < 2; ++d) {
      for (std::size_t k = 0; k < 4; ++k) {
        out.push_back({prefix + ".dir" + std::to_string(d) + "." + names[k], weights[d][k], false});
      }
    }
  }
};

namespace detail {

// x [B, S, d] scaled by every perspective row: [B, S, l, d].
template <class T>
BasicTensor<T> perspective_scale(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  return mul(reshape(x, Shape{x.dim(0), x.dim(1), 1, x.dim(2)}), w);
}

// Per-perspective cosine between p [B, Sp, d] and v [B, Sp, d]: [B, Sp, l].
template <class T>
BasicTensor<T> perspective_cosine(const BasicTensor<T>& p, const BasicTensor<T>& v, const BasicTensor<T>& w) {
  return cosine_similarity(perspective_scale(p, w), perspective_scale(v, w), -1);
}

// Padded key mask for [rows, Sp, Sq] scores, rows = B * repeat.
inline std::vector<std::uint8_t> key_mask(const SeqMask& q_mask, std::size_t repeat, std::size_t sp) {
  std::vector<std::uint8_t> out(q_mask.batch * repeat * sp * q_mask.seq);
  std::size_t i = 0;
  for (std::size_t b = 0; b < q_mask.batch; ++b) {
    for (std::size_t r = 0; r < repeat * sp; ++r) {
      for (std::size_t j = 0; j < q_mask.seq; ++j) out[i++] = !q_mask.is_real(b, j);
    }
  }
  return out;
}

template <class T>
BasicTensor<T> full_match(const BasicTensor<T>& p, const BasicTensor<T>& q, const SeqMask& q_mask, bool last,
                          const BasicTensor<T>& w) {
  auto anchor = nn::select_positions(q, nn::edge_selector<T>(q_mask, last));  // [B, d]
  auto anchor_seq = broadcast_to(reshape(anchor, Shape{p.dim(0), 1, p.dim(2)}), p.shape());
  return perspective_cosine(p, anchor_seq, w);
}

template <class T>
BasicTensor<T> maxpool_match(const BasicTensor<T>& p, const BasicTensor<T>& q, const SeqMask& q_mask,
                             const BasicTensor<T>& w) {
  const std::size_t batch = p.dim(0), sp = p.dim(1), sq = q.dim(1), d = p.dim(2), l = w.dim(0);
  auto by_perspective = [&](const BasicTensor<T>& x, std::size_t s) {
    auto scaled = transpose(perspective_scale(x, w), 1, 2);  // [B, l, S, d]
    return reshape(scaled, Shape{batch * l, s, d});
  };
  auto cos = pairwise_cosine(by_perspective(p, sp), by_perspective(q, sq));  // [B*l, Sp, Sq]
  cos = masked_fill(cos, std::span<const std::uint8_t>(key_mask(q_mask, l, sp)),
                    -std::numeric_limits<T>::infinity());
  auto best = reshape(max(cos, 2), Shape{batch, l, sp});
  return transpose(best, 1, 2);
}

// Cosine between every p_i and q_j with padded q_j zeroed: [B, Sp, Sq].
template <class T>
BasicTensor<T> attention_cosine(const BasicTensor<T>& p, const BasicTensor<T>& q, const SeqMask& q_mask) {
  auto cos = pairwise_cosine(p, q);
  return masked_fill(cos, std::span<const std::uint8_t>(key_mask(q_mask, 1, p.dim(1))), T(0));
}

/// Floor on |sum of attention weights| in the attentive mean. Cosine matching
/// is scale invariant, so only the sign of the sum reaches the output.
inline constexpr double kAttentiveFloor = 1e-6;

template <class T>
BasicTensor<T> attentive_match(const BasicTensor<T>& p, const BasicTensor<T>& q, const BasicTensor<T>& alpha,
                               const BasicTensor<T>& w) {
  auto weighted = bmm(alpha, q);  // [B, Sp, d]
  auto total = abs_floor(sum(alpha, 2, true), static_cast<T>(kAttentiveFloor));  // [B, Sp, 1]
  return perspective_cosine(p, div(weighted, total), w);
}

template <class T>
BasicTensor<T> max_attentive_match(const BasicTensor<T>& p, const BasicTensor<T>& q, const BasicTensor<T>& alpha,
                                   const SeqMask& q_mask, const BasicTensor<T>& w) {
  const std::size_t batch = p.dim(0), sp = p.dim(1), sq = q.dim(1);
  const auto a = alpha.data();
  std::vector<T> pick(batch * sp * sq, T(0));
  std::uint64_t trace = 0xCBF29CE484222325ULL;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < sp; ++i) {
      const T* row = a.data() + (b * sp + i) * sq;
      std::size_t best = sq;
      for (std::size_t j = 0; j < sq; ++j) {
        if (!q_mask.is_real(b, j)) continue;
        if (best == sq || row[j] > row[best]) best = j;
      }
      if (best == sq) best = 0;
      pick[(b * sp + i) * sq + best] = T(1);
      trace = hash_bits(trace, best);
    }
  }
  stacktune::detail::record_branch(trace);
  auto selector = BasicTensor<T>::from(Shape{batch, sp, sq}, std::move(pick));
  return perspective_cosine(p, bmm(selector, q), w);
}

}  // namespace detail

/// Multi-perspective matching of every position of P against Q:
/// [B, Sp, h] x [B, Sq, h] -> [B, Sp, 8 l], laid out as
/// direction-major, then strategy (full, maxpool, attentive, max-attentive),
/// then perspective. Every entry is a cosine and lies in [-1, 1].
template <class T>
BasicTensor<T> multi_perspective_match(const BasicTensor<T>& p, const SeqMask& p_mask, const BasicTensor<T>& q,
                                       const SeqMask& q_mask, const MatchingLayerParams<T>& params) {
  (void)p_mask;  // padded rows of P are produced and masked downstream
  if (p.rank() != 3 || q.rank() != 3 || p.dim(0) != q.dim(0) || p.dim(2) != params.input_dim ||
      q.dim(2) != params.input_dim) {
    throw ShapeError("multi_perspective_match: shapes " + shape_str(p.shape()) + " and " +
                     shape_str(q.shape()) + " do not fit input width " + std::to_string(params.input_dim));
  }
  const std::size_t dd = params.direction_dim();
  std::vector<BasicTensor<T>> parts;
  for (std::size_t dir = 0; dir < 2; ++dir) {
    auto pd = params.split_directions ? slice(p, 2, dir * dd, dd) : p;
    auto qd = params.split_directions ? slice(q, 2, dir * dd, dd) : q;
    const auto& w = params.weights[dir];
    parts.push_back(detail::full_match(pd, qd, q_mask, dir == 0, w[0]));
    parts.push_back(detail::maxpool_match(pd, qd, q_mask, w[1]));
    auto alpha = detail::attention_cosine(pd, qd, q_mask);
    parts.push_back(detail::attentive_match(pd, qd, alpha, w[2]));
    parts.push_back(detail::max_attentive_match(pd, qd, alpha, q_mask, w[3]));
  }
  return concat(parts, 2);
}

// ---------------------------------------------------------------------------
// Heads

template <class T>
class FcTokenHead final : public Head<T> {
 public:
  FcTokenHead(const HeadSpec& spec, std::size_t in, Rng& rng)
      : Head<T>(spec),
        fc_(in, spec.hidden > 0 ? std::size_t(spec.hidden) : in, std::size_t(spec.num_classes), spec.fc_layers == 2,
            spec.dropout_p, rng) {}

  BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng, HeadTrace<T>* = nullptr) const override {
    return fc_(in.enc, train, rng);
  }

  ParamList<T> params() const override {
    ParamList<T> out;
    fc_.collect(out, "head");
    return out;
  }

 private:
  FcStack<T> fc_;
};

template <class T>
class FcClsHead final : public Head<T> {
 public:
  FcClsHead(const HeadSpec& spec, std::size_t in, Rng& rng)
      : Head<T>(spec),
        fc_(in, spec.hidden > 0 ? std::size_t(spec.hidden) : in, std::size_t(spec.num_classes), spec.fc_layers == 2,
            spec.dropout_p, rng) {}

  BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng, HeadTrace<T>* = nullptr) const override {
    return fc_(nn::cls_vector(in.enc), train, rng);
  }

  ParamList<T> params() const override {
    ParamList<T> out;
    fc_.collect(out, "head");
    return out;
  }

 private:
  FcStack<T> fc_;
};

template <class T>
class BiLstmTaggerHead final : public Head<T> {
 public:
  BiLstmTaggerHead(const HeadSpec& spec, std::size_t in, Rng& rng)
      : Head<T>(spec),
        lstm_(in, lstm_width(spec, in), Init::Kaiming, rng),
        fc_(2 * lstm_width(spec, in), spec.hidden > 0 ? std::size_t(spec.hidden) : in, std::size_t(spec.num_classes),
            true, spec.dropout_p, rng) {}

  BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng, HeadTrace<T>* = nullptr) const override {
    auto states = lstm_(in.enc, &in.mask).seq;
    return fc_(dropout(states, this->spec_.dropout_p, rng, train), train, rng);
  }

  ParamList<T> params() const override {
    ParamList<T> out;
    lstm_.collect(out, "head.bilstm");
    fc_.collect(out, "head");
    return out;
  }

  const BiLstm<T>& lstm() const { return lstm_; }

 private:
  static std::size_t lstm_width(const HeadSpec& spec, std::size_t in) {
    return spec.lstm_hidden > 0 ? std::size_t(spec.lstm_hidden) : std::max<std::size_t>(1, in / 2);
  }

  BiLstm<T> lstm_;
  FcStack<T> fc_;
};

/// Four blocks of four width-preserving convolutions (kernel 3, same padding,
/// relu) over the token axis. Inside a block, conv i reads the block input
/// plus the outputs of convs 0..i-1, and the block emits that running sum.
/// Each block is followed by a window-3, stride-1 max-pool. Padded positions
/// are zero inside blocks and never win a pool. The pooled sequence is
/// reduced by a global max, joined with [CLS], and classified by two FC layers.
template <class T>
class DenseNetHead final : public Head<T> {
 public:
  static constexpr std::size_t kBlocks = 4;
  static constexpr std::size_t kConvsPerBlock = 4;

  DenseNetHead(const HeadSpec& spec, std::size_t in, Rng& rng)
      : Head<T>(spec),
        width_(in),
        fc_(2 * in, spec.hidden > 0 ? std::size_t(spec.hidden) : in, std::size_t(spec.num_classes), true,
            spec.dropout_p, rng) {
    for (auto& block : convs_) {
      for (auto& conv : block) conv = Linear<T>(3 * in, in, Init::Kaiming, rng);
    }
  }

  BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng, HeadTrace<T>* = nullptr) const override {
    return fc_(concat<T>({features(in.enc, in.mask), nn::cls_vector(in.enc)}, 1), train, rng);
  }

  /// Globally max-pooled output of the block stack, [B, h].
  BasicTensor<T> features(const BasicTensor<T>& enc, const SeqMask& mask) const {
    if (enc.dim(1) < 1) throw Error("densenet: sequence must hold at least one position");
    const auto keep = nn::mask_tensor<T>(mask);
    const auto pads = nn::pad_fill_mask(mask, width_);
    auto x = mul(enc, keep);
    for (const auto& block : convs_) {
      auto running = x;
      for (const auto& conv : block) running = add(running, mul(relu(conv1d(running, conv)), keep));
      x = pool3(running, pads);
    }
    return nn::masked_max_over_time(x, mask);
  }

  ParamList<T> params() const override {
    ParamList<T> out;
    for (std::size_t b = 0; b < kBlocks; ++b) {
      for (std::size_t c = 0; c < kConvsPerBlock; ++c) {
        convs_[b][c].collect(out, "head.block" + std::to_string(b) + ".conv" + std::to_string(c));
      }
    }
    fc_.collect(out, "head");
    return out;
  }

  std::array<std::array<Linear<T>, kConvsPerBlock>, kBlocks>& convs() { return convs_; }

 private:
  // Kernel-3 convolution with zero padding: [B, S, h] -> [B, S, h].
  static BasicTensor<T> conv1d(const BasicTensor<T>& x, const Linear<T>& conv) {
    const std::size_t batch = x.dim(0), seq = x.dim(1), h = x.dim(2);
    auto zero = BasicTensor<T>::zeros(Shape{batch, 1, h});
    auto padded = concat<T>({zero, x, zero}, 1);
    auto window = concat<T>({slice(padded, 1, 0, seq), slice(padded, 1, 1, seq), slice(padded, 1, 2, seq)}, 2);
    return conv(window);
  }

  // Window-3 stride-1 max-pool with edge replication; pads excluded, then zeroed.
  static BasicTensor<T> pool3(const BasicTensor<T>& x, const std::vector<std::uint8_t>& pads) {
    const std::size_t batch = x.dim(0), seq = x.dim(1), h = x.dim(2);
    auto hidden = masked_fill(x, std::span<const std::uint8_t>(pads), -std::numeric_limits<T>::infinity());
    auto padded = concat<T>({slice(hidden, 1, 0, 1), hidden, slice(hidden, 1, seq - 1, 1)}, 1);
    std::vector<BasicTensor<T>> shifts;
    for (std::size_t k = 0; k < 3; ++k) shifts.push_back(reshape(slice(padded, 1, k, seq), Shape{batch, seq, 1, h}));
    auto pooled = max(concat(shifts, 2), 2);
    return masked_fill(pooled, std::span<const std::uint8_t>(pads), T(0));
  }

  std::size_t width_;
  std::array<std::array<Linear<T>, kConvsPerBlock>, kBlocks> convs_;
  FcStack<T> fc_;
};

/// Two stacked LSTMs joined by a highway connection: layer 2 reads
/// T * H + (1 - T) * x with H the layer-1 states, x the layer-1 input and
/// T = sigmoid(W x + b). The layer-2 state at the last real position is
/// joined with [CLS] and mapped to logits by one affine layer.
template <class T>
class HighwayLstmHead final : public Head<T> {
 public:
  HighwayLstmHead(const HeadSpec& spec, std::size_t in, Rng& rng)
      : Head<T>(spec),
        layer1_(in, in, Init::Kaiming, rng),
        gate_(in, in, Init::Kaiming, rng),
        layer2_(in, in, Init::Kaiming, rng),
        out_(2 * in, std::size_t(spec.num_classes), Init::Kaiming, rng) {}

  /// When set, T is this constant instead of the learned gate.
  std::optional<double> gate_override;

  BasicTensor<T> highway_input(const BasicTensor<T>& enc, const SeqMask& mask) const {
    auto transformed = layer1_.run(enc, &mask, false).seq;
    auto t = gate_override ? BasicTensor<T>::full(enc.shape(), static_cast<T>(*gate_override)) : sigmoid(gate_(enc));
    return add(mul(t, transformed), mul(one_minus(t), enc));
  }

  BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng, HeadTrace<T>* = nullptr) const override {
    auto mixed = dropout(highway_input(in.enc, in.mask), this->spec_.dropout_p, rng, train);
    auto last = layer2_.run(mixed, &in.mask, false).final;
    auto joined = concat<T>({last, nn::cls_vector(in.enc)}, 1);
    return out_(dropout(joined, this->spec_.dropout_p, rng, train));
  }

  ParamList<T> params() const override {
    ParamList<T> out;
    layer1_.collect(out, "head.lstm1");
    gate_.collect(out, "head.gate");
    layer2_.collect(out, "head.lstm2");
    out_.collect(out, "head.out");
    return out;
  }

 private:
  Lstm<T> layer1_;
  Linear<T> gate_;
  Lstm<T> layer2_;
  Linear<T> out_;
};

/// Matching front end shared by BIMPM and Sim-Transformer: optional context
/// BiLSTM, then multi-perspective matching in both directions (P against Q
/// and Q against P, same weights).
template <class T>
struct MatchingFrontEnd {
  bool context_lstm = true;
  BiLstm<T> context;
  MatchingLayerParams<T> matching;

  MatchingFrontEnd() = default;
  MatchingFrontEnd(std::size_t in, std::size_t context_hidden, std::size_t perspectives, bool use_context, Rng& rng)
      : context_lstm(use_context) {
    if (use_context) {
      context = BiLstm<T>(in, context_hidden, Init::Kaiming, rng);
      matching = MatchingLayerParams<T>(2 * context_hidden, perspectives, true, rng);
    } else {
      matching = MatchingLayerParams<T>(in, perspectives, false, rng);
    }
  }

  /// {P matched against Q [B, Sp, 8l], Q matched against P [B, Sq, 8l]}
  std::pair<BasicTensor<T>, BasicTensor<T>> operator()(const HeadInput<T>& in, double dropout_p, bool train,
                                                       Rng* rng) const {
    auto p = in.enc, q = in.enc_b;
    if (context_lstm) {
      p = context(p, &in.mask).seq;
      q = context(q, &in.mask_b).seq;
    }
    p = dropout(p, dropout_p, rng, train);
    q = dropout(q, dropout_p, rng, train);
    return {multi_perspective_match(p, in.mask, q, in.mask_b, matching),
            multi_perspective_match(q, in.mask_b, p, in.mask, matching)};
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    if (context_lstm) context.collect(out, prefix + ".context");
    matching.collect(out, prefix + ".matching");
  }
};

/// BIMPM: matching front end, aggregation BiLSTM over both matching
/// sequences, final states of both directions of both sequences through two
/// FC layers.
template <class T>
class BimpmHead final : public Head<T> {
 public:
  BimpmHead(const HeadSpec& spec, std::size_t in, Rng& rng)
      : Head<T>(spec),
        front_(in, lstm_width(spec, in), std::size_t(spec.perspectives), spec.kind == HeadKind::Bimpm, rng),
        aggregate_(front_.matching.output_dim(), lstm_width(spec, in), Init::Kaiming, rng),
        fc_(4 * lstm_width(spec, in), spec.hidden > 0 ? std::size_t(spec.hidden) : in, std::size_t(spec.num_classes),
            true, spec.dropout_p, rng) {}

  BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng, HeadTrace<T>* = nullptr) const override {
    const double p = this->spec_.dropout_p;
    auto [mp, mq] = front_(in, p, train, rng);
    auto ap = aggregate_(dropout(mp, p, rng, train), &in.mask);
    auto aq = aggregate_(dropout(mq, p, rng, train), &in.mask_b);
    auto joined = concat<T>({ap.fwd_final, ap.bwd_final, aq.fwd_final, aq.bwd_final}, 1);
    return fc_(dropout(joined, p, rng, train), train, rng);
  }

  ParamList<T> params() const override {
    ParamList<T> out;
    front_.collect(out, "head");
    aggregate_.collect(out, "head.aggregate");
    fc_.collect(out, "head");
    return out;
  }

  const MatchingFrontEnd<T>& front() const { return front_; }

 private:
  static std::size_t lstm_width(const HeadSpec& spec, std::size_t in) {
    return spec.lstm_hidden > 0 ? std::size_t(spec.lstm_hidden) : std::max<std::size_t>(1, in / 2);
  }

  MatchingFrontEnd<T> front_;
  BiLstm<T> aggregate_;
  FcStack<T> fc_;
};

/// BIMPM with the aggregation BiLSTM replaced by a transformer block over the
/// matching positions. Each matching sequence is projected to the model
/// width, passed through the shared block, and max-pooled over real
/// positions; the two pooled vectors go through two FC layers.
template <class T>
class SimTransformerHead final : public Head<T> {
 public:
  SimTransformerHead(const HeadSpec& spec, std::size_t in, Rng& rng)
      : Head<T>(spec),
        front_(in, context_width(spec, in), std::size_t(spec.perspectives), true, rng),
        project_(front_.matching.output_dim(), model_width(spec, in), Init::Kaiming, rng),
        block_(model_width(spec, in), std::size_t(spec.attention_heads), 2 * model_width(spec, in), Init::Kaiming,
               rng),
        fc_(2 * model_width(spec, in), model_width(spec, in), std::size_t(spec.num_classes), true, spec.dropout_p,
            rng) {}

  BasicTensor<T> forward(const HeadInput<T>& in, bool train, Rng* rng, HeadTrace<T>* trace = nullptr) const override {
    const double p = this->spec_.dropout_p;
    auto [mp, mq] = front_(in, p, train, rng);
    auto pool = [&](const BasicTensor<T>& m, const SeqMask& mask) {
      BasicTensor<T> probs;
      auto h = block_(project_(m), mask, p, rng, train, trace ? &probs : nullptr);
      if (trace) trace->attention.push_back(probs);
      return nn::masked_max_over_time(h, mask);
    };
    auto joined = concat<T>({pool(mp, in.mask), pool(mq, in.mask_b)}, 1);
    return fc_(dropout(joined, p, rng, train), train, rng);
  }

  ParamList<T> params() const override {
    ParamList<T> out;
    front_.collect(out, "head");
    project_.collect(out, "head.project");
    block_.collect(out, "head.transformer");
    fc_.collect(out, "head");
    return out;
  }

 private:
  static std::size_t context_width(const HeadSpec& spec, std::size_t in) {
    return spec.lstm_hidden > 0 ? std::size_t(spec.lstm_hidden) : std::max<std::size_t>(1, in / 2);
  }
  static std::size_t model_width(const HeadSpec& spec, std::size_t in) {
    return spec.hidden > 0 ? std::size_t(spec.hidden) : in;
  }

  MatchingFrontEnd<T> front_;
  Linear<T> project_;
  TransformerBlock<T> block_;
  FcStack<T> fc_;
};

template <class T>
std::unique_ptr<Head<T>> make_head(const HeadSpec& spec, std::size_t input_dim, Rng& rng) {
  spec.validate();
  switch (spec.kind) {
    case HeadKind::FcToken: return std::make_unique<FcTokenHead<T>>(spec, input_dim, rng);
    case HeadKind::FcCls: return std::make_unique<FcClsHead<T>>(spec, input_dim, rng);
    case HeadKind::BiLstmTagger: return std::make_unique<BiLstmTaggerHead<T>>(spec, input_dim, rng);
    case HeadKind::DenseNetCls: return std::make_unique<DenseNetHead<T>>(spec, input_dim, rng);
    case HeadKind::HighwayLstmCls: return std::make_unique<HighwayLstmHead<T>>(spec, input_dim, rng);
    case HeadKind::Bimpm:
    case HeadKind::BimpmNoFirstLstm: return std::make_unique<BimpmHead<T>>(spec, input_dim, rng);
    case HeadKind::SimTransformer: return std::make_unique<SimTransformerHead<T>>(spec, input_dim, rng);
  }
  throw Error("make_head: unhandled head kind");
}

}  // namespace stacktune
