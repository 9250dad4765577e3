#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stacktune/data.hpp"
#include "stacktune/encoder.hpp"
#include "stacktune/heads.hpp"
#include "stacktune/metrics.hpp"
#include "stacktune/optim.hpp"
#include "stacktune/rng.hpp"

namespace stacktune {

// ---------------------------------------------------------------------------
// Strategies and plans

enum class Strategy { StackAndFinetune, StackOnly, FinetuneOnly };

inline const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all{Strategy::StackAndFinetune, Strategy::StackOnly, Strategy::FinetuneOnly};
  return all;
}

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::StackAndFinetune: return "stack-and-finetune";
    case Strategy::StackOnly: return "stack-only";
    case Strategy::FinetuneOnly: return "finetune-only";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  for (Strategy k : all_strategies()) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown strategy '" + s + "' (expected stack-and-finetune, stack-only or finetune-only)");
}

struct AdaptPlan {
  Strategy strategy = Strategy::StackAndFinetune;
  double phase1_lr = 1e-3;
  double phase2_lr = 5e-5;
  std::vector<double> lr_grid_phase1{1e-1, 1e-2, 5e-3, 1e-3, 5e-4};
  std::vector<double> lr_grid_phase2{1e-3, 1e-4, 5e-5, 1e-5};
  double gap_threshold = 0.05;
  int patience = 2;         // phase-1 plateau length
  int phase2_patience = 3;  // early stopping in phase 2
  int max_epochs_phase1 = 10;
  int max_epochs_phase2 = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool record_wall_time = false;

  bool has_phase1() const { return strategy != Strategy::FinetuneOnly; }
  bool has_phase2() const { return strategy != Strategy::StackOnly; }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error("adapt plan: " + what); };
    if (!(phase1_lr >= 0.0) || !(phase2_lr >= 0.0)) fail("learning rates must be non-negative");
    if (!(gap_threshold >= 0.0)) fail("gap_threshold must be non-negative");
    if (patience < 1 || phase2_patience < 1) fail("patience must be at least 1");
    if (has_phase1() && max_epochs_phase1 < 1) fail("max_epochs_phase1 must be at least 1");
    if (has_phase2() && max_epochs_phase2 < 1) fail("max_epochs_phase2 must be at least 1");
    if (batch_size < 1) fail("batch_size must be at least 1");
  }
};

// ---------------------------------------------------------------------------
// Phase switching

/// True when the latest train/val accuracy gap exceeds `gamma`, or when val
/// accuracy has not improved on its earlier best for `patience` epochs.
/// `history` holds one train and one val record per epoch, in any interleaving.
inline bool switch_phase(const std::vector<MetricRecord>& history, double gamma, int patience) {
  if (history.empty()) throw Error("switch_phase: history is empty");
  if (patience < 1) throw Error("switch_phase: patience must be at least 1");
  std::vector<double> train, val;
  for (const auto& r : history) {
    if (r.split == Split::Train) train.push_back(r.accuracy);
    if (r.split == Split::Val) val.push_back(r.accuracy);
  }
  if (train.size() != val.size()) {
    throw Error("switch_phase: " + std::to_string(train.size()) + " train records vs " +
                std::to_string(val.size()) + " val records");
  }
  if (val.empty()) throw Error("switch_phase: history has no train/val records");
  if (train.back() - val.back() > gamma) return true;
  const std::size_t p = std::size_t(patience);
  if (val.size() <= p) return false;
  const double earlier = *std::max_element(val.begin(), val.end() - std::ptrdiff_t(p));
  const double recent = *std::max_element(val.end() - std::ptrdiff_t(p), val.end());
  return recent <= earlier;
}

// ---------------------------------------------------------------------------
// Task data

enum class TaskKind { Tagging, Classification, Pair };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Tagging: return "tagging";
    case TaskKind::Classification: return "classification";
    case TaskKind::Pair: return "pair";
  }
  return "?";
}

/// An encoded example. `ids` and `ids_b` start with [CLS]; `joint` is the
/// [CLS] A [SEP] B [SEP] encoding of a pair. For tagging, `tags[i]` labels
/// ids[i] and is kIgnoreIndex at [CLS].
struct TaskExample {
  std::vector<int> ids;
  std::vector<int> ids_b;
  std::vector<int> joint;
  std::vector<int> tags;
  int label = 0;
};

struct TaskData {
  TaskKind kind = TaskKind::Classification;
  std::vector<std::string> label_names;
  std::vector<TaskExample> train;
  std::vector<TaskExample> val;

  std::size_t num_classes() const { return label_names.size(); }
};

inline std::vector<TaskExample> encode_tagging(const std::vector<TaggedSentence>& sentences, const Vocab& vocab,
                                               const std::vector<std::string>& tag_names, std::size_t max_len) {
  std::vector<TaskExample> out;
  for (const auto& s : sentences) {
    TaskExample ex;
    ex.ids = encode_tokens(s.tokens, vocab, max_len);
    ex.tags.push_back(kIgnoreIndex);
    for (std::size_t i = 0; i + 1 < ex.ids.size(); ++i) {
      const auto it = std::find(tag_names.begin(), tag_names.end(), s.tags[i]);
      if (it == tag_names.end()) throw Error("encode_tagging: tag '" + s.tags[i] + "' is not in the inventory");
      ex.tags.push_back(int(it - tag_names.begin()));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TaskExample> encode_classification(const std::vector<ClassExample>& examples, const Vocab& vocab,
                                                      std::size_t max_len) {
  std::vector<TaskExample> out;
  for (const auto& e : examples) {
    TaskExample ex;
    ex.ids = encode_tokens(e.tokens, vocab, max_len);
    ex.label = e.label;
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TaskExample> encode_pairs(const std::vector<PairExample>& examples, const Vocab& vocab,
                                             std::size_t max_len) {
  std::vector<TaskExample> out;
  for (const auto& e : examples) {
    TaskExample ex;
    ex.ids = encode_tokens(e.a, vocab, max_len);
    ex.ids_b = encode_tokens(e.b, vocab, max_len);
    ex.joint = encode_pair_joint(e.a, e.b, vocab, max_len);
    ex.label = e.label;
    out.push_back(std::move(ex));
  }
  return out;
}

inline TaskKind task_kind(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::Tagging: return TaskKind::Tagging;
    case SyntheticTask::Classification: return TaskKind::Classification;
    case SyntheticTask::Pair: return TaskKind::Pair;
  }
  return TaskKind::Classification;
}

/// Encodes a synthetic train/val split; both datasets must be of the same task.
inline TaskData make_task_data(const SyntheticDataset& train, const SyntheticDataset& val, const Vocab& vocab,
                               std::size_t max_len) {
  if (train.task != val.task) throw Error("make_task_data: train and val come from different tasks");
  TaskData data;
  data.kind = task_kind(train.task);
  data.label_names = train.label_names;
  switch (train.task) {
    case SyntheticTask::Tagging:
      data.train = encode_tagging(train.tagging, vocab, data.label_names, max_len);
      data.val = encode_tagging(val.tagging, vocab, data.label_names, max_len);
      break;
    case SyntheticTask::Classification:
      data.train = encode_classification(train.classification, vocab, max_len);
      data.val = encode_classification(val.classification, vocab, max_len);
      break;
    case SyntheticTask::Pair:
      data.train = encode_pairs(train.pairs, vocab, max_len);
      data.val = encode_pairs(val.pairs, vocab, max_len);
      break;
  }
  return data;
}

/// Heads a task accepts. Pair tasks take a pair head (Siamese encoding) or
/// fc-cls over the joint encoding.
inline bool head_fits_task(HeadKind head, TaskKind task) {
  switch (task) {
    case TaskKind::Tagging: return is_token_head(head);
    case TaskKind::Classification: return !is_token_head(head) && !is_pair_head(head);
    case TaskKind::Pair: return is_pair_head(head) || head == HeadKind::FcCls;
  }
  return false;
}

/// The light head finetune-only uses for a task.
inline HeadKind light_head_for(TaskKind task) {
  return task == TaskKind::Tagging ? HeadKind::FcToken : HeadKind::FcCls;
}

// ---------------------------------------------------------------------------
// Encoder + head

template <class T>
struct TaskModel {
  TaskKind task = TaskKind::Classification;
  EncoderModel<T> encoder;
  std::unique_ptr<Head<T>> head;

  bool siamese() const { return task == TaskKind::Pair && is_pair_head(head->spec().kind); }

  ParamList<T> params() const {
    auto out = encoder.encoder_params();
    for (auto& p : head->params()) out.push_back(p);
    return out;
  }
};

namespace detail {

/// Per-example encoder outputs of a frozen encoder, [len, h] row-major.
template <class T>
struct FeatureCache {
  std::vector<std::vector<T>> a;
  std::vector<std::vector<T>> b;
};

template <class T>
const std::vector<int>& first_side(const TaskModel<T>& model, const TaskExample& ex) {
  return model.task == TaskKind::Pair && !model.siamese() ? ex.joint : ex.ids;
}

template <class T>
std::vector<std::vector<T>> encode_rows(const EncoderModel<T>& encoder, const std::vector<const std::vector<int>*>& rows,
                                        std::size_t chunk) {
  NoGradGuard no_grad;
  const std::size_t h = encoder.hidden_dim();
  std::vector<std::vector<T>> out;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t end = std::min(rows.size(), start + chunk);
    std::vector<std::vector<int>> part;
    for (std::size_t i = start; i < end; ++i) part.push_back(*rows[i]);
    const TokenBatch tb = TokenBatch::from_rows(part);
    const auto enc = encoder.encode(tb, false, nullptr);
    const auto v = enc.data();
    for (std::size_t r = 0; r < part.size(); ++r) {
      const std::size_t len = part[r].size();
      const auto* base = v.data() + r * tb.seq * h;
      out.emplace_back(base, base + len * h);
    }
  }
  return out;
}

template <class T>
FeatureCache<T> build_cache(const TaskModel<T>& model, const std::vector<TaskExample>& examples, std::size_t chunk) {
  FeatureCache<T> cache;
  std::vector<const std::vector<int>*> rows_a, rows_b;
  for (const auto& ex : examples) {
    rows_a.push_back(&first_side(model, ex));
    if (model.siamese()) rows_b.push_back(&ex.ids_b);
  }
  cache.a = encode_rows(model.encoder, rows_a, chunk);
  if (model.siamese()) cache.b = encode_rows(model.encoder, rows_b, chunk);
  return cache;
}

// Stacks cached features into a zero-padded [B, S, h] tensor.
template <class T>
BasicTensor<T> stack_cached(const std::vector<std::vector<T>>& features, std::span<const std::size_t> idx,
                            std::size_t seq, std::size_t h) {
  std::vector<T> values(idx.size() * seq * h, T(0));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& f = features[idx[r]];
    std::copy(f.begin(), f.end(), values.begin() + std::ptrdiff_t(r * seq * h));
  }
  return BasicTensor<T>::from(Shape{idx.size(), seq, h}, std::move(values));
}

}  // namespace detail

/// Logits for a batch of examples: [B, S, C] for tagging, [B, C] otherwise.
/// With a feature cache the encoder is skipped and its cached outputs used.
template <class T>
BasicTensor<T> forward_batch(const TaskModel<T>& model, const std::vector<TaskExample>& examples,
                             std::span<const std::size_t> idx, bool train, Rng* rng,
                             const detail::FeatureCache<T>* cache = nullptr) {
  auto side = [&](bool second) {
    std::vector<std::vector<int>> rows;
    for (std::size_t i : idx) rows.push_back(second ? examples[i].ids_b : detail::first_side(model, examples[i]));
    TokenBatch tb = TokenBatch::from_rows(rows);
    BasicTensor<T> enc;
    if (cache) {
      enc = detail::stack_cached(second ? cache->b : cache->a, idx, tb.seq, model.encoder.hidden_dim());
    } else {
      enc = model.encoder.encode(tb, train, rng);
    }
    return std::make_pair(enc, tb.mask());
  };
  HeadInput<T> in;
  std::tie(in.enc, in.mask) = side(false);
  if (model.siamese()) std::tie(in.enc_b, in.mask_b) = side(true);
  return model.head->forward(in, train, rng);
}

/// Targets aligned with forward_batch logits, flattened.
inline std::vector<int> batch_targets(TaskKind task, const std::vector<TaskExample>& examples,
                                      std::span<const std::size_t> idx, std::size_t seq) {
  std::vector<int> out;
  if (task != TaskKind::Tagging) {
    for (std::size_t i : idx) out.push_back(examples[i].label);
    return out;
  }
  for (std::size_t i : idx) {
    const auto& tags = examples[i].tags;
    for (std::size_t s = 0; s < seq; ++s) out.push_back(s < tags.size() ? tags[s] : kIgnoreIndex);
  }
  return out;
}

template <class T>
BasicTensor<T> flat_logits(const BasicTensor<T>& logits) {
  if (logits.rank() == 2) return logits;
  return reshape(logits, Shape{logits.dim(0) * logits.dim(1), logits.dim(2)});
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// Eval-mode metrics over a split. Tagging: token accuracy over real tokens
/// (excluding [CLS]) and entity F1. Otherwise: accuracy and macro-F1.
template <class T>
Evaluation evaluate(const TaskModel<T>& model, const std::vector<TaskExample>& examples,
                    const std::vector<std::string>& label_names, std::size_t batch_size,
                    const detail::FeatureCache<T>* cache = nullptr) {
  NoGradGuard no_grad;
  Evaluation ev;
  if (examples.empty()) return ev;
  const std::size_t classes = label_names.size();
  Confusion confusion(classes);
  std::vector<int> token_pred, token_gold;
  std::vector<std::vector<SpanLabel>> pred_spans, gold_spans;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    const auto logits = forward_batch(model, examples, idx, false, nullptr, cache);
    const std::size_t seq = logits.rank() == 3 ? logits.dim(1) : 1;
    const auto targets = batch_targets(model.task, examples, idx, seq);
    const auto flat = flat_logits(logits);
    std::size_t counted = 0;
    for (int t : targets) counted += t != kIgnoreIndex;
    loss_sum += double(cross_entropy(flat, std::span<const int>(targets), kIgnoreIndex).item()) * double(counted);
    loss_count += counted;
    const std::vector<T> values(flat.data().begin(), flat.data().end());
    const auto pred = argmax_rows(values, flat.dim(0), classes);
    if (model.task != TaskKind::Tagging) {
      for (std::size_t r = 0; r < pred.size(); ++r) confusion.add(targets[r], pred[r]);
      continue;
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& ex = examples[idx[r]];
      std::vector<std::string> p_tags, g_tags;
      for (std::size_t s = 1; s < ex.tags.size(); ++s) {
        const int p = pred[r * seq + s];
        token_pred.push_back(p);
        token_gold.push_back(ex.tags[s]);
        p_tags.push_back(label_names[std::size_t(p)]);
        g_tags.push_back(label_names[std::size_t(ex.tags[s])]);
      }
      pred_spans.push_back(bio_to_spans(p_tags));
      gold_spans.push_back(bio_to_spans(g_tags));
    }
  }
  ev.loss = loss_count ? loss_sum / double(loss_count) : 0.0;
  if (model.task == TaskKind::Tagging) {
    ev.accuracy = token_accuracy(token_pred, token_gold);
    ev.f1 = entity_f1(pred_spans, gold_spans);
  } else {
    ev.accuracy = confusion.accuracy();
    ev.f1 = confusion.macro_f1();
  }
  return ev;
}

/// Class probabilities per example, [n x C] row-major. Tagging tasks have no
/// per-example distribution and are rejected.
template <class T>
std::vector<double> predict_proba(const TaskModel<T>& model, const std::vector<TaskExample>& examples,
                                  std::size_t batch_size = 32) {
  if (model.task == TaskKind::Tagging) throw Error("predict_proba: tagging models have no per-example distribution");
  NoGradGuard no_grad;
  std::vector<double> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    const auto probs = softmax(forward_batch(model, examples, idx, false, nullptr), -1);
    for (T v : probs.data()) out.push_back(double(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

template <class T>
struct AdaptResult {
  std::vector<MetricRecord> history;
  MetricRecord best_val;  // the record of the restored checkpoint
  std::uint64_t encoder_checksum_loaded = 0;
  std::optional<std::uint64_t> encoder_checksum_after_phase1;
  TaskModel<T> model;

  bool freeze_held() const {
    return !encoder_checksum_after_phase1 || *encoder_checksum_after_phase1 == encoder_checksum_loaded;
  }
};

namespace detail {

template <class T>
std::vector<std::vector<T>> snapshot(const ParamList<T>& params) {
  std::vector<std::vector<T>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

template <class T>
void restore(const ParamList<T>& params, const std::vector<std::vector<T>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.node()->data.data();
    std::copy(values[i].begin(), values[i].end(), dst);
  }
}

template <class T>
void set_requires_grad(const ParamList<T>& params, bool on) {
  for (auto p : params) p.tensor.set_requires_grad(on);
}

enum class StopRule { SwitchPhase, Plateau };

struct PhaseOptions {
  int phase = 1;
  double lr = 1e-3;
  int max_epochs = 1;
  StopRule rule = StopRule::Plateau;
  int patience = 1;
  double gamma = 0.0;
  bool freeze_encoder = false;
  bool restore_best = true;
};

// One training phase. Appends a train and a val record per epoch to `history`
// and returns the best val record (earliest on ties).
template <class T>
MetricRecord run_phase(TaskModel<T>& model, const TaskData& data, const AdaptPlan& plan, const PhaseOptions& opt,
                       Rng& rng, std::vector<MetricRecord>& history) {
  const auto encoder_params = model.encoder.encoder_params();
  const auto head_params = model.head->params();
  set_requires_grad(encoder_params, !opt.freeze_encoder);
  std::vector<ParamGroup<T>> groups = make_groups<T>("head", head_params);
  if (!opt.freeze_encoder) {
    for (auto& g : make_groups<T>("encoder", encoder_params)) groups.push_back(std::move(g));
  }
  OptimizerConfig cfg;
  cfg.global_lr = opt.lr;

  // A frozen encoder is a fixed feature extractor: encode once, in eval mode.
  std::optional<FeatureCache<T>> train_cache, val_cache;
  if (opt.freeze_encoder) {
    train_cache = build_cache(model, data.train, plan.batch_size);
    val_cache = build_cache(model, data.val, plan.batch_size);
  }
  const FeatureCache<T>* tc = train_cache ? &*train_cache : nullptr;
  const FeatureCache<T>* vc = val_cache ? &*val_cache : nullptr;

  const auto all_params = model.params();
  std::vector<std::vector<T>> best_values = snapshot(all_params);
  std::optional<MetricRecord> best;
  std::vector<MetricRecord> phase_history;
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
      const std::size_t end = std::min(order.size(), start + plan.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto logits = forward_batch(model, data.train, idx, true, &rng, tc);
      const std::size_t seq = logits.rank() == 3 ? logits.dim(1) : 1;
      const auto targets = batch_targets(model.task, data.train, idx, seq);
      auto loss = cross_entropy(flat_logits(logits), std::span<const int>(targets), kIgnoreIndex);
      if (!std::isfinite(double(loss.item()))) throw NonFiniteLoss(epoch, opt.phase);
      zero_grad(groups);
      backward(loss);
      step(groups, cfg);
    }
    const Evaluation tr = evaluate(model, data.train, data.label_names, plan.batch_size, tc);
    const Evaluation va = evaluate(model, data.val, data.label_names, plan.batch_size, vc);
    std::int64_t wall = 0;
    if (plan.record_wall_time) {
      wall = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    }
    if (!std::isfinite(tr.loss) || !std::isfinite(va.loss)) throw NonFiniteLoss(epoch, opt.phase);
    const MetricRecord train_rec{epoch, opt.phase, Split::Train, tr.loss, tr.accuracy, tr.f1, wall};
    const MetricRecord val_rec{epoch, opt.phase, Split::Val, va.loss, va.accuracy, va.f1, wall};
    for (const auto& r : {train_rec, val_rec}) {
      phase_history.push_back(r);
      history.push_back(r);
    }
    if (!best || val_rec.accuracy > best->accuracy) {
      best = val_rec;
      best_values = snapshot(all_params);
    }
    const bool stop = opt.rule == StopRule::SwitchPhase
                          ? switch_phase(phase_history, opt.gamma, opt.patience)
                          : switch_phase(phase_history, std::numeric_limits<double>::infinity(), opt.patience);
    if (stop) break;
  }
  if (opt.restore_best) restore(all_params, best_values);
  set_requires_grad(encoder_params, true);
  return *best;
}

}  // namespace detail

/// Builds the task model for a plan: a copy of `encoder` plus a fresh head
/// drawn from `rng`. The head's class count is taken from the task.
template <class T>
TaskModel<T> make_task_model(const AdaptPlan& plan, const EncoderModel<T>& encoder, HeadSpec head,
                             const TaskData& data, Rng& rng) {
  if (plan.strategy == Strategy::FinetuneOnly && !is_light_head(head.kind)) {
    throw Error(std::string("finetune-only trains a light head (fc-token or fc-cls), not ") + to_string(head.kind));
  }
  if (!head_fits_task(head.kind, data.kind)) {
    throw Error(std::string("head ") + to_string(head.kind) + " does not fit the " + to_string(data.kind) + " task");
  }
  if (data.num_classes() < 2) throw Error("task needs at least two labels");
  head.num_classes = int(data.num_classes());
  TaskModel<T> model;
  model.task = data.kind;
  model.encoder = encoder.clone();
  model.head = make_head<T>(head, encoder.hidden_dim(), rng);
  return model;
}

/// Runs one adaptation strategy.
///   stack-and-finetune: phase 1 trains the head on a frozen encoder at
///     phase1_lr until switch_phase fires; phase 2 trains everything at
///     phase2_lr with early stopping and restores the best val checkpoint.
///   stack-only: phase 1 alone, stopped by the val plateau rule, best val
///     checkpoint restored.
///   finetune-only: phase 2 alone, with a light head.
template <class T>
AdaptResult<T> run_strategy(const AdaptPlan& plan, const EncoderModel<T>& encoder, const HeadSpec& head,
                            const TaskData& data) {
  plan.validate();
  if (data.train.empty() || data.val.empty()) throw Error("run_strategy: train and val splits must be non-empty");
  Rng rng(plan.seed);
  AdaptResult<T> result;
  result.model = make_task_model(plan, encoder, head, data, rng);
  result.encoder_checksum_loaded = checksum(encoder.encoder_params());
  if (plan.has_phase1()) {
    detail::PhaseOptions opt;
    opt.phase = 1;
    opt.lr = plan.phase1_lr;
    opt.max_epochs = plan.max_epochs_phase1;
    opt.rule = plan.strategy == Strategy::StackOnly ? detail::StopRule::Plateau : detail::StopRule::SwitchPhase;
    opt.patience = plan.patience;
    opt.gamma = plan.gap_threshold;
    opt.freeze_encoder = true;
    opt.restore_best = plan.strategy == Strategy::StackOnly;
    result.best_val = detail::run_phase(result.model, data, plan, opt, rng, result.history);
    result.encoder_checksum_after_phase1 = checksum(result.model.encoder.encoder_params());
  }
  if (plan.has_phase2()) {
    detail::PhaseOptions opt;
    opt.phase = 2;
    opt.lr = plan.phase2_lr;
    opt.max_epochs = plan.max_epochs_phase2;
    opt.rule = detail::StopRule::Plateau;
    opt.patience = plan.phase2_patience;
    opt.freeze_encoder = false;
    opt.restore_best = true;
    result.best_val = detail::run_phase(result.model, data, plan, opt, rng, result.history);
  }
  return result;
}

/// Encoder and head tensors of a trained model ("head." names come from the head).
template <class T>
std::vector<std::uint8_t> save_task_checkpoint(const TaskModel<T>& model) {
  Checkpoint ckpt;
  ckpt.config = model.encoder.config();
  append_tensors(ckpt, model.encoder.encoder_params());
  append_tensors(ckpt, model.head->params());
  return serialize_checkpoint(ckpt);
}

/// Loads tensors saved by save_task_checkpoint into a model built with the
/// same encoder config and head spec.
template <class T>
void load_task_checkpoint(TaskModel<T>& model, std::span<const std::uint8_t> bytes) {
  const Checkpoint ckpt = parse_checkpoint(bytes);
  if (!matches_stored_config(ckpt.config, model.encoder.config())) {
    throw Error("task checkpoint: stored encoder config does not match the model");
  }
  restore_tensors(ckpt, model.encoder.encoder_params());
  restore_tensors(ckpt, model.head->params());
}

// ---------------------------------------------------------------------------
// Ensembling

/// Equal-weight mean of member probability matrices ([n x C] row-major each).
inline std::vector<double> ensemble_mean(const std::vector<std::vector<double>>& members, std::size_t classes) {
  if (members.empty()) throw Error("ensemble: no members");
  if (classes == 0) throw Error("ensemble: class count must be positive");
  const std::size_t size = members.front().size();
  if (size % classes != 0) throw Error("ensemble: member size is not a multiple of the class count");
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (members[m].size() != size) {
      throw Error("ensemble: member " + std::to_string(m) + " has " + std::to_string(members[m].size()) +
                  " entries, expected " + std::to_string(size));
    }
    for (std::size_t r = 0; r < size / classes; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = members[m][r * classes + c];
        if (!(p >= -1e-5 && p <= 1.0 + 1e-5)) throw Error("ensemble: member " + std::to_string(m) + " row " +
                                                           std::to_string(r) + " is not a distribution");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-5) {
        throw Error("ensemble: member " + std::to_string(m) + " row " + std::to_string(r) + " sums to " +
                    std::to_string(total));
      }
    }
  }
  std::vector<double> mean(size, 0.0);
  for (const auto& m : members) {
    for (std::size_t i = 0; i < size; ++i) mean[i] += m[i];
  }
  for (auto& v : mean) v /= double(members.size());
  return mean;
}

/// Argmax of the equal-weight mean; ties go to the lowest class index.
inline std::vector<int> ensemble_predict(const std::vector<std::vector<double>>& members, std::size_t classes) {
  const auto mean = ensemble_mean(members, classes);
  return argmax_rows(mean, mean.size() / classes, classes);
}

// ---------------------------------------------------------------------------
// Learning-rate grid search

struct GridResult {
  double phase1_lr = 0.0;
  double phase2_lr = 0.0;
  MetricRecord best_val;
  std::size_t evaluated = 0;
};

/// Tries (phase1_lr, phase2_lr) pairs in grid order (phase 1 outer) until
/// `budget` pairs have run; `runner` returns the best val record of a plan.
/// The highest val accuracy wins, ties going to the earlier pair. A strategy
/// with a single phase only iterates the grid of that phase.
inline GridResult grid_search(const AdaptPlan& base, const std::vector<double>& grid1,
                              const std::vector<double>& grid2, std::size_t budget,
                              const std::function<MetricRecord(const AdaptPlan&)>& runner) {
  if (budget < 1) throw Error("grid_search: budget must be at least 1");
  std::vector<double> g1 = base.has_phase1() ? grid1 : std::vector<double>{base.phase1_lr};
  std::vector<double> g2 = base.has_phase2() ? grid2 : std::vector<double>{base.phase2_lr};
  if (g1.empty() || g2.empty()) throw Error("grid_search: empty learning-rate grid");
  GridResult best;
  bool have = false;
  for (double lr1 : g1) {
    for (double lr2 : g2) {
      if (best.evaluated == budget) return best;
      AdaptPlan plan = base;
      plan.phase1_lr = lr1;
      plan.phase2_lr = lr2;
      const MetricRecord rec = runner(plan);
      ++best.evaluated;
      if (!have || rec.accuracy > best.best_val.accuracy) {
        best.phase1_lr = lr1;
        best.phase2_lr = lr2;
        best.best_val = rec;
        have = true;
      }
    }
  }
  return best;
}

}  // namespace stacktune
