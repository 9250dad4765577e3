#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stacktune/metrics.hpp"
#include "stacktune/nn.hpp"
#include "stacktune/ops.hpp"
#include "stacktune/optim.hpp"
#include "stacktune/rng.hpp"

namespace stacktune {

// Reserved vocabulary ids.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kUnkId = 4;
inline constexpr int kNumSpecialIds = 5;

struct EncoderConfig {
  int vocab_size = 0;
  int hidden_dim = 64;
  int num_layers = 2;
  int num_attention_heads = 4;
  int ffn_dim = 0;  // 0 means 4 * hidden_dim
  int max_seq_len = 64;
  double dropout_p = 0.1;

  int effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden_dim; }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error("encoder config: " + what); };
    if (vocab_size <= kNumSpecialIds) fail("vocab_size must exceed the reserved ids");
    if (hidden_dim <= 0 || num_layers < 0 || max_seq_len <= 0) fail("sizes must be positive");
    if (num_attention_heads <= 0 || hidden_dim % num_attention_heads != 0) {
      fail("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by " +
           std::to_string(num_attention_heads) + " attention heads");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Rows of token ids with a padding mask. Every row starts with [CLS] and
/// padding only appears as a trailing suffix.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> token_ids;
  std::vector<std::uint8_t> attention_mask;

  int id(std::size_t b, std::size_t s) const { return token_ids[b * seq + s]; }
  bool real(std::size_t b, std::size_t s) const { return attention_mask[b * seq + s] != 0; }

  SeqMask mask() const { return SeqMask{batch, seq, attention_mask}; }

  /// Pads ragged rows to a common length. Each row must already begin with [CLS].
  static TokenBatch from_rows(const std::vector<std::vector<int>>& rows) {
    TokenBatch tb;
    tb.batch = rows.size();
    for (const auto& r : rows) tb.seq = std::max(tb.seq, r.size());
    tb.token_ids.assign(tb.batch * tb.seq, kPadId);
    tb.attention_mask.assign(tb.batch * tb.seq, 0);
    for (std::size_t b = 0; b < rows.size(); ++b) {
      for (std::size_t s = 0; s < rows[b].size(); ++s) {
        tb.token_ids[b * tb.seq + s] = rows[b][s];
        tb.attention_mask[b * tb.seq + s] = 1;
      }
    }
    return tb;
  }
};

/// Per-layer attention weights captured during encode(), [B * heads, S, S].
template <class T>
struct EncoderTrace {
  std::vector<BasicTensor<T>> attention;
};

/// Miniature BERT: token + learned position embeddings, a stack of post-norm
/// bidirectional self-attention blocks, and a masked-LM projection.
template <class T>
class EncoderModel {
 public:
  EncoderModel() = default;

  EncoderModel(const EncoderConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const auto h = static_cast<std::size_t>(config_.hidden_dim);
    token_embedding_ = init_weight<T>(Shape{std::size_t(config_.vocab_size), h}, Init::BertNormal, rng);
    position_embedding_ =
        init_weight<T>(Shape{std::size_t(config_.max_seq_len), h}, Init::BertNormal, rng);
    embedding_norm_ = LayerNorm<T>(h);
    for (int l = 0; l < config_.num_layers; ++l) {
      blocks_.emplace_back(h, std::size_t(config_.num_attention_heads),
                           std::size_t(config_.effective_ffn_dim()), Init::BertNormal, rng);
    }
    mlm_head_ = Linear<T>(h, std::size_t(config_.vocab_size), Init::BertNormal, rng);
  }

  const EncoderConfig& config() const { return config_; }
  std::size_t hidden_dim() const { return std::size_t(config_.hidden_dim); }

  /// Contextual vectors [batch, seq, hidden]; position 0 holds [CLS].
  BasicTensor<T> encode(const TokenBatch& batch, bool train, Rng* rng,
                        EncoderTrace<T>* trace = nullptr) const {
    if (batch.seq > std::size_t(config_.max_seq_len)) {
      throw Error("encode: sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                  std::to_string(config_.max_seq_len));
    }
    for (int id : batch.token_ids) {
      if (id < 0 || id >= config_.vocab_size) {
        throw Error("encode: token id " + std::to_string(id) + " out of range for vocab_size " +
                    std::to_string(config_.vocab_size));
      }
    }
    const std::size_t b = batch.batch, s = batch.seq;
    auto tokens = embedding(token_embedding_, std::span<const int>(batch.token_ids), Shape{b, s});
    std::vector<int> positions(s);
    for (std::size_t i = 0; i < s; ++i) positions[i] = static_cast<int>(i);
    auto pos = embedding(position_embedding_, std::span<const int>(positions), Shape{s});
    auto x = embedding_norm_(add(tokens, pos));
    x = dropout(x, config_.dropout_p, rng, train);
    const SeqMask mask = batch.mask();
    for (const auto& block : blocks_) {
      BasicTensor<T> probs;
      x = block(x, mask, config_.dropout_p, rng, train, trace ? &probs : nullptr);
      if (trace) trace->attention.push_back(probs);
    }
    return x;
  }

  /// Vocabulary logits for every position, [batch, seq, vocab].
  BasicTensor<T> mlm_logits(const BasicTensor<T>& encoded) const { return mlm_head_(encoded); }

  ParamList<T> encoder_params() const {
    ParamList<T> out;
    out.push_back({"embeddings.token", token_embedding_, false});
    out.push_back({"embeddings.position", position_embedding_, false});
    embedding_norm_.collect(out, "embeddings.norm");
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      blocks_[l].collect(out, "layers." + std::to_string(l));
    }
    return out;
  }

  ParamList<T> mlm_params() const {
    ParamList<T> out;
    mlm_head_.collect(out, "mlm");
    return out;
  }

  ParamList<T> all_params() const {
    auto out = encoder_params();
    for (auto& p : mlm_params()) out.push_back(p);
    return out;
  }

  /// Deep copy; the result shares no tensors with this model.
  EncoderModel clone() const {
    EncoderModel copy = *this;
    copy.rebind_fresh();
    return copy;
  }

  template <class U>
  EncoderModel<U> cast() const {
    Rng dummy(0);
    EncoderModel<U> out(config_, dummy);
    auto src = all_params();
    auto dst = out.all_params();
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (std::size_t j = 0; j < src[i].tensor.numel(); ++j) {
        dst[i].tensor[j] = static_cast<U>(src[i].tensor[j]);
      }
    }
    return out;
  }

 private:
  // Gives every parameter its own storage (used after a shallow copy).
  void rebind_fresh() {
    auto fresh = [](BasicTensor<T>& t) {
      t = BasicTensor<T>::from(t.shape(), std::vector<T>(t.data().begin(), t.data().end()),
                               t.requires_grad());
    };
    fresh(token_embedding_);
    fresh(position_embedding_);
    fresh(embedding_norm_.gain);
    fresh(embedding_norm_.bias);
    for (auto& blk : blocks_) {
      for (auto* lin : {&blk.attention.query, &blk.attention.key, &blk.attention.value,
                        &blk.attention.output, &blk.ffn_in, &blk.ffn_out}) {
        fresh(lin->weight);
        fresh(lin->bias);
      }
      for (auto* ln : {&blk.attention_norm, &blk.ffn_norm}) {
        fresh(ln->gain);
        fresh(ln->bias);
      }
    }
    fresh(mlm_head_.weight);
    fresh(mlm_head_.bias);
  }

  EncoderConfig config_;
  BasicTensor<T> token_embedding_;
  BasicTensor<T> position_embedding_;
  LayerNorm<T> embedding_norm_;
  std::vector<TransformerBlock<T>> blocks_;
  Linear<T> mlm_head_;
};

// ---------------------------------------------------------------------------
// Masked language modelling

struct MaskedBatch {
  TokenBatch batch;
  std::vector<int> targets;  // original id at selected positions, kIgnoreIndex elsewhere
};

/// Selects exactly round(mask_prob * n) maskable positions per row (real,
/// non-reserved tokens). Of the selected: 80% become [MASK], 10% a random
/// non-reserved id, 10% stay unchanged.
inline MaskedBatch mlm_mask(const TokenBatch& batch, int vocab_size, Rng& rng, double mask_prob = 0.15) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) {
    throw Error("mlm_mask: mask_prob must be in [0, 1], got " + std::to_string(mask_prob));
  }
  MaskedBatch out{batch, std::vector<int>(batch.token_ids.size(), kIgnoreIndex)};
  std::vector<std::size_t> candidates;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    candidates.clear();
    for (std::size_t s = 0; s < batch.seq; ++s) {
      if (batch.real(b, s) && batch.id(b, s) >= kNumSpecialIds) candidates.push_back(s);
    }
    const auto count = static_cast<std::size_t>(std::llround(mask_prob * double(candidates.size())));
    // Partial Fisher-Yates: the first `count` entries become the selection.
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
      std::swap(candidates[i], candidates[j]);
    }
    std::sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count));
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = b * batch.seq + candidates[i];
      out.targets[idx] = batch.token_ids[idx];
      const double u = rng.uniform();
      if (u < 0.8) {
        out.batch.token_ids[idx] = kMaskId;
      } else if (u < 0.9) {
        out.batch.token_ids[idx] =
            kNumSpecialIds + static_cast<int>(rng.below(std::uint64_t(vocab_size - kNumSpecialIds)));
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> mlm_loss(const EncoderModel<T>& model, const MaskedBatch& masked, bool train, Rng* rng) {
  auto enc = model.encode(masked.batch, train, rng);
  auto logits = model.mlm_logits(enc);
  const std::size_t rows = masked.batch.batch * masked.batch.seq;
  auto flat = reshape(logits, Shape{rows, std::size_t(model.config().vocab_size)});
  return cross_entropy(flat, std::span<const int>(masked.targets), kIgnoreIndex);
}

struct PretrainOptions {
  std::size_t seq_len = 32;  // including [CLS]
  std::size_t batch_size = 32;
  double mask_prob = 0.15;
  bool record_wall_time = false;
  std::string checkpoint_path;  // written after the last epoch when non-empty
};

/// Cuts a token stream into [CLS]-prefixed rows of at most `seq_len` tokens.
inline std::vector<std::vector<int>> chunk_corpus(std::span<const int> corpus, std::size_t seq_len) {
  if (seq_len < 2) throw Error("chunk_corpus: seq_len must be at least 2");
  std::vector<std::vector<int>> rows;
  const std::size_t body = seq_len - 1;
  for (std::size_t start = 0; start < corpus.size(); start += body) {
    std::vector<int> row{kClsId};
    const std::size_t end = std::min(corpus.size(), start + body);
    row.insert(row.end(), corpus.begin() + static_cast<std::ptrdiff_t>(start),
               corpus.begin() + static_cast<std::ptrdiff_t>(end));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Mean masked-LM loss of the model in eval mode with a fixed masking seed.
template <class T>
double evaluate_mlm(const EncoderModel<T>& model, std::span<const int> corpus, std::uint64_t seed,
                    const PretrainOptions& opt = {}) {
  NoGradGuard no_grad;
  Rng rng(seed);
  const auto rows = chunk_corpus(corpus, opt.seq_len);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < rows.size(); start += opt.batch_size) {
    const std::size_t end = std::min(rows.size(), start + opt.batch_size);
    std::vector<std::vector<int>> chunk(rows.begin() + std::ptrdiff_t(start), rows.begin() + std::ptrdiff_t(end));
    auto masked = mlm_mask(TokenBatch::from_rows(chunk), model.config().vocab_size, rng, opt.mask_prob);
    total += static_cast<double>(mlm_loss(model, masked, false, nullptr).item());
    ++batches;
  }
  return batches ? total / double(batches) : 0.0;
}

template <class T>
void save_checkpoint_file(const EncoderModel<T>& model, const std::string& path);

/// Masked-LM pre-training. One MetricRecord per epoch (phase 0, split train)
/// carrying the mean training loss and masked-token accuracy.
template <class T>
std::vector<MetricRecord> pretrain(EncoderModel<T>& model, std::span<const int> corpus, int epochs,
                                   const OptimizerConfig& cfg, Rng& rng,
                                   const PretrainOptions& opt = {}) {
  if (corpus.empty()) throw Error("pretrain: corpus is empty");
  cfg.validate();
  std::vector<MetricRecord> history;
  if (epochs <= 0) return history;
  auto rows = chunk_corpus(corpus, opt.seq_len);
  ParamList<T> params = model.all_params();
  auto groups = make_groups<T>("encoder", params);
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0, correct = 0, masked_count = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      std::vector<std::vector<int>> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(rows[order[i]]);
      auto masked = mlm_mask(TokenBatch::from_rows(chunk), model.config().vocab_size, rng, opt.mask_prob);
      auto enc = model.encode(masked.batch, true, &rng);
      auto logits = model.mlm_logits(enc);
      const std::size_t n = masked.batch.batch * masked.batch.seq;
      const auto vocab = std::size_t(model.config().vocab_size);
      auto flat = reshape(logits, Shape{n, vocab});
      auto loss = cross_entropy(flat, std::span<const int>(masked.targets), kIgnoreIndex);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NonFiniteLoss(epoch, 0);
      }
      zero_grad(groups);
      backward(loss);
      step(groups, cfg);
      loss_sum += value;
      ++batches;
      const auto lv = flat.data();
      for (std::size_t i = 0; i < n; ++i) {
        if (masked.targets[i] == kIgnoreIndex) continue;
        const auto* row = lv.data() + i * vocab;
        const auto best = std::max_element(row, row + vocab) - row;
        correct += best == masked.targets[i];
        ++masked_count;
      }
    }
    MetricRecord rec;
    rec.epoch = epoch;
    rec.phase = 0;
    rec.split = Split::Train;
    rec.loss = loss_sum / double(batches);
    rec.accuracy = masked_count ? double(correct) / double(masked_count) : 0.0;
    if (opt.record_wall_time) {
      rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - started)
                        .count();
    }
    history.push_back(rec);
  }
  if (!opt.checkpoint_path.empty()) save_checkpoint_file(model, opt.checkpoint_path);
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers little-endian):
//   "STKT" | u32 version | config block | u32 tensor count | tensors...
//   config block: u32 vocab_size, hidden_dim, num_layers, num_attention_heads,
//                 ffn_dim, max_seq_len; f32 dropout_p
//   tensor: u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 payload

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'K', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  EncoderConfig config;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw Error(std::string("checkpoint truncated while reading ") + what + " at byte " +
                  std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32(out, kCheckpointVersion);
  const auto& c = ckpt.config;
  for (int v : {c.vocab_size, c.hidden_dim, c.num_layers, c.num_attention_heads, c.ffn_dim, c.max_seq_len}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  detail::put_f32(out, static_cast<float>(c.dropout_p));
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : t.values) detail::put_f32(out, f);
  }
  return out;
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::Reader in(bytes);
  if (in.str(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw Error("checkpoint: bad magic (expected STKT)");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.vocab_size = static_cast<int>(in.u32("config"));
  c.hidden_dim = static_cast<int>(in.u32("config"));
  c.num_layers = static_cast<int>(in.u32("config"));
  c.num_attention_heads = static_cast<int>(in.u32("config"));
  c.ffn_dim = static_cast<int>(in.u32("config"));
  c.max_seq_len = static_cast<int>(in.u32("config"));
  c.dropout_p = static_cast<double>(in.f32("config"));
  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = in.str(in.u32("name length"), "tensor name");
    const std::uint32_t rank = in.u32("rank");
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(in.u32("dims"));
    const std::size_t n = numel(t.shape);
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.values[k] = in.f32("tensor payload");
    ckpt.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw Error("checkpoint: trailing bytes after last tensor");
  return ckpt;
}

template <class T>
void append_tensors(Checkpoint& ckpt, const ParamList<T>& params, const std::string& prefix = "") {
  for (const auto& p : params) {
    CheckpointTensor t{prefix + p.name, p.tensor.shape(), {}};
    t.values.reserve(p.tensor.numel());
    for (T v : p.tensor.data()) t.values.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(t));
  }
}

/// Copies checkpoint tensors into `params` by name, checking every shape.
template <class T>
void restore_tensors(const Checkpoint& ckpt, const ParamList<T>& params, const std::string& prefix = "") {
  for (const auto& p : params) {
    const std::string name = prefix + p.name;
    const CheckpointTensor* t = ckpt.find(name);
    if (!t) throw Error("checkpoint: missing tensor '" + name + "'");
    if (t->shape != p.tensor.shape()) {
      throw Error("checkpoint: tensor '" + name + "' has shape " + shape_str(t->shape) +
                  " but the configuration expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.node()->data.data();
    for (std::size_t i = 0; i < t->values.size(); ++i) dst[i] = static_cast<T>(t->values[i]);
  }
}

template <class T>
std::vector<std::uint8_t> save_checkpoint(const EncoderModel<T>& model) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  append_tensors(ckpt, model.all_params());
  return serialize_checkpoint(ckpt);
}

/// Config equality at checkpoint precision: dropout_p is stored as f32.
inline bool matches_stored_config(EncoderConfig stored, EncoderConfig wanted) {
  stored.dropout_p = static_cast<float>(stored.dropout_p);
  wanted.dropout_p = static_cast<float>(wanted.dropout_p);
  return stored == wanted;
}

template <class T>
EncoderModel<T> load_checkpoint(std::span<const std::uint8_t> bytes, const EncoderConfig& config) {
  const Checkpoint ckpt = parse_checkpoint(bytes);
  Rng rng(0);
  EncoderModel<T> model(config, rng);
  restore_tensors(ckpt, model.all_params());
  // Shapes cannot reveal every difference (e.g. head count, dropout).
  if (!matches_stored_config(ckpt.config, config)) {
    throw Error("checkpoint: stored encoder config does not match the requested config");
  }
  return model;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void save_checkpoint_file(const EncoderModel<T>& model, const std::string& path) {
  write_file_bytes(path, save_checkpoint(model));
}

/// Reads the config stored in a checkpoint file and loads the model with it.
template <class T>
EncoderModel<T> load_checkpoint_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  const Checkpoint ckpt = parse_checkpoint(bytes);
  return load_checkpoint<T>(bytes, ckpt.config);
}

}  // namespace stacktune
