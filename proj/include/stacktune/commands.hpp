#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "stacktune/adapt.hpp"
#include "stacktune/config.hpp"
#include "stacktune/gradcheck_suite.hpp"

// The five CLI commands. Each reads a RunConfig, writes its artifacts under
// cfg.out (and nowhere else) together with manifest.json and the resolved
// config, and returns a result struct. Errors are thrown; run_command maps
// them to exit codes.

namespace stacktune {

using Float = float;  // training precision

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

/// STACKTUNE_THREADS, default 1.
inline int thread_count() {
  const char* env = std::getenv("STACKTUNE_THREADS");
  if (!env || !*env) return 1;
  const std::string value = env;
  int n = 0;
  try {
    n = detail::parse_number<int>("STACKTUNE_THREADS", value);
  } catch (const ConfigError&) {
    throw ConfigError("STACKTUNE_THREADS must be a positive integer, got '" + value + "'");
  }
  if (n < 1) throw ConfigError("STACKTUNE_THREADS must be a positive integer, got '" + value + "'");
  return n;
}

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is not set");
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Output directory of a command; every artifact path goes through it.
class OutDir {
 public:
  explicit OutDir(const std::string& root) : root_(root) { std::filesystem::create_directories(root_); }

  std::string path(const std::string& name) const { return (root_ / name).string(); }

  OutDir sub(const std::string& name) const { return OutDir((root_ / name).string()); }

  void write(const std::string& name, const std::string& text) {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw Error("cannot write file: " + path(name));
    out << text;
    files_.push_back(name);
  }

  void write_bytes(const std::string& name, std::span<const std::uint8_t> bytes) {
    write_file_bytes(path(name), bytes);
    files_.push_back(name);
  }

  const std::vector<std::string>& files() const { return files_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

/// manifest.json: command, seed, config hash, the canonical config text,
/// artifacts and command results. config.cfg holds the same config text so
/// `--config <out>/config.cfg` repeats the run.
inline void write_manifest(OutDir& dir, const std::string& command, const RunConfig& cfg,
                           const nlohmann::ordered_json& results) {
  dir.write("config.cfg", config_to_string(cfg));
  nlohmann::ordered_json m;
  m["command"] = command;
  m["seed"] = cfg.seed;
  m["config_hash"] = hex64(config_hash(cfg));
  m["config"] = config_to_string(cfg);
  m["artifacts"] = dir.files();
  m["results"] = results;
  dir.write("manifest.json", m.dump(2) + "\n");
}

inline nlohmann::ordered_json record_json(const MetricRecord& r) { return nlohmann::ordered_json::parse(to_json_line(r)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Inputs shared by the commands

/// The vocabulary a config implies: the synthetic word list, a vocab file, or
/// one built from the training file (and the pre-training text, if any).
inline Vocab build_vocab(const RunConfig& cfg) {
  if (cfg.data_source == "synthetic") return Vocab::synthetic(cfg.vocab_words);
  if (!cfg.vocab_path.empty()) {
    require_file(cfg.vocab_path, "data.vocab_path");
    return Vocab::load(cfg.vocab_path);
  }
  std::vector<std::vector<std::string>> corpus;
  if (cfg.pretrain_corpus == "text") corpus.push_back(tokenize(detail::read_text(cfg.pretrain_text_path)));
  require_file(cfg.train_path, "data.train_path");
  switch (parse_task_kind(cfg.task)) {
    case TaskKind::Tagging:
      for (auto& s : load_conll(cfg.train_path)) corpus.push_back(s.tokens);
      break;
    case TaskKind::Classification:
      for (auto& e : load_class_tsv(cfg.train_path).examples) corpus.push_back(e.tokens);
      break;
    case TaskKind::Pair:
      for (auto& p : load_pair_tsv(cfg.train_path)) {
        corpus.push_back(p.a);
        corpus.push_back(p.b);
      }
      break;
  }
  return Vocab::build(corpus);
}

/// Train and validation splits. Synthetic splits are drawn with data seeds
/// derived from cfg.seed: train 3 * seed + 100, val 3 * seed + 101 (and the
/// pre-training corpus 3 * seed + 102), so no two runs with different seeds
/// share a draw.
inline TaskData build_task_data(const RunConfig& cfg, const Vocab& vocab) {
  const TaskKind kind = parse_task_kind(cfg.task);
  if (cfg.data_source == "synthetic") {
    const SyntheticTask task = kind == TaskKind::Tagging          ? SyntheticTask::Tagging
                               : kind == TaskKind::Classification ? SyntheticTask::Classification
                                                                  : SyntheticTask::Pair;
    const auto train = gen_synthetic(task, std::size_t(cfg.train_size), cfg.vocab_words, 3 * cfg.seed + 100);
    const auto val = gen_synthetic(task, std::size_t(cfg.val_size), cfg.vocab_words, 3 * cfg.seed + 101);
    return make_task_data(train, val, vocab, cfg.max_len);
  }
  require_file(cfg.train_path, "data.train_path");
  require_file(cfg.val_path, "data.val_path");
  TaskData data;
  data.kind = kind;
  switch (kind) {
    case TaskKind::Tagging: {
      const auto train = load_conll(cfg.train_path);
      const auto val = load_conll(cfg.val_path);
      data.label_names = tag_inventory(train);
      data.train = encode_tagging(train, vocab, data.label_names, cfg.max_len);
      data.val = encode_tagging(val, vocab, data.label_names, cfg.max_len);
      break;
    }
    case TaskKind::Classification: {
      const auto train = load_class_tsv(cfg.train_path);
      const auto val = load_class_tsv(cfg.val_path, train.label_names);
      data.label_names = train.label_names;
      data.train = encode_classification(train.examples, vocab, cfg.max_len);
      data.val = encode_classification(val.examples, vocab, cfg.max_len);
      break;
    }
    case TaskKind::Pair:
      data.label_names = {"0", "1"};
      data.train = encode_pairs(load_pair_tsv(cfg.train_path), vocab, cfg.max_len);
      data.val = encode_pairs(load_pair_tsv(cfg.val_path), vocab, cfg.max_len);
      break;
  }
  if (data.train.empty() || data.val.empty()) throw ConfigError("data files hold no examples");
  return data;
}

/// Masked-LM token stream. "bigram" is the successor-chain corpus over the
/// first pretrain.coverage words (all words when 0); the task names give
/// unlabeled text of that synthetic task; "text" reads pretrain.text_path.
/// "auto" is unlabeled text of the configured task: fresh synthetic draws, or
/// the tokens of the training file. Corpus draws use seed 3 * cfg.seed + 102.
inline std::vector<int> build_pretrain_corpus(const RunConfig& cfg, const Vocab& vocab) {
  const std::uint64_t seed = 3 * cfg.seed + 102;
  const auto tokens = std::size_t(cfg.pretrain_tokens);
  std::vector<int> corpus;
  if (cfg.pretrain_corpus == "auto") {
    if (cfg.data_source == "synthetic") {
      RunConfig task_cfg = cfg;
      task_cfg.pretrain_corpus = cfg.task;
      return build_pretrain_corpus(task_cfg, vocab);
    }
    const TaskData data = build_task_data(cfg, vocab);
    for (const auto& ex : data.train) {
      for (const auto* side : {&ex.ids, &ex.ids_b}) {
        for (int id : *side) {
          if (id >= kNumSpecialIds) corpus.push_back(id);
        }
      }
    }
    corpus.resize(std::min(corpus.size(), tokens));
    return corpus;
  }
  if (cfg.pretrain_corpus == "bigram") {
    const int words = cfg.pretrain_coverage > 0 ? cfg.pretrain_coverage : cfg.vocab_words;
    if (words + kNumSpecialIds > vocab.size()) {
      throw ConfigError("config: the bigram corpus needs " + std::to_string(words) + " words but the vocabulary has " +
                        std::to_string(vocab.size() - kNumSpecialIds));
    }
    return gen_bigram_corpus(tokens, words, seed, cfg.pretrain_follow_p);
  }
  if (cfg.pretrain_corpus == "text") {
    require_file(cfg.pretrain_text_path, "pretrain.text_path");
    for (const auto& t : tokenize(detail::read_text(cfg.pretrain_text_path))) corpus.push_back(vocab.id(t));
    if (corpus.empty()) throw ConfigError("pretraining text is empty: " + cfg.pretrain_text_path);
    return corpus;
  }
  const SyntheticTask task = parse_synthetic_task(cfg.pretrain_corpus);
  // Every sentence has at least min_len tokens, so this many always suffice.
  const std::size_t sentences = tokens / std::size_t(SyntheticOptions{}.min_len) + 1;
  const auto ds = gen_synthetic(task, sentences, cfg.vocab_words, seed);
  auto push = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) corpus.push_back(vocab.id(w));
  };
  for (const auto& s : ds.tagging) push(s.tokens);
  for (const auto& e : ds.classification) push(e.tokens);
  for (const auto& p : ds.pairs) {
    push(p.a);
    push(p.b);
  }
  corpus.resize(std::min(corpus.size(), tokens));
  return corpus;
}

inline PretrainOptions pretrain_options(const RunConfig& cfg) {
  PretrainOptions opt;
  opt.seq_len = cfg.pretrain_seq_len;
  opt.batch_size = cfg.pretrain_batch_size;
  opt.mask_prob = cfg.pretrain_mask_prob;
  opt.record_wall_time = cfg.plan.record_wall_time;
  return opt;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainResult {
  EncoderModel<Float> encoder;
  std::vector<MetricRecord> history;  // epoch-0 val, train epochs, final val
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Builds the encoder from cfg.encoder and trains it with masked LM. The val
/// records are evaluate_mlm over the training corpus with a fixed masking seed.
inline PretrainResult pretrain_encoder(const RunConfig& cfg, const Vocab& vocab) {
  const auto corpus = build_pretrain_corpus(cfg, vocab);
  EncoderConfig ec = cfg.encoder;
  ec.vocab_size = vocab.size();
  Rng rng(cfg.seed);
  PretrainResult r;
  r.encoder = EncoderModel<Float>(ec, rng);
  const auto opt = pretrain_options(cfg);
  OptimizerConfig oc;
  oc.global_lr = cfg.pretrain_lr;
  const std::uint64_t eval_seed = cfg.seed + 1;
  auto eval_record = [&](int epoch) {
    MetricRecord rec;
    rec.epoch = epoch;
    rec.split = Split::Val;
    rec.loss = evaluate_mlm(r.encoder, corpus, eval_seed, opt);
    if (!std::isfinite(rec.loss)) throw NonFiniteLoss(epoch, 0);
    return rec;
  };
  r.history.push_back(eval_record(0));
  for (auto& rec : pretrain(r.encoder, corpus, cfg.pretrain_epochs, oc, rng, opt)) r.history.push_back(rec);
  r.history.push_back(eval_record(cfg.pretrain_epochs));
  r.initial_loss = r.history.front().loss;
  r.final_loss = r.history.back().loss;
  return r;
}

inline PretrainResult cmd_pretrain(const RunConfig& cfg, std::ostream& out = std::cout) {
  validate_config(cfg);
  const Vocab vocab = build_vocab(cfg);
  detail::OutDir dir(cfg.out);
  auto r = pretrain_encoder(cfg, vocab);
  dir.write_bytes("encoder.stkt", save_checkpoint(r.encoder));
  std::string vocab_text;
  for (int i = 0; i < vocab.size(); ++i) vocab_text += vocab.token(i) + "\n";
  dir.write("vocab.txt", vocab_text);
  dir.write("metrics.jsonl", to_json_lines(r.history));
  nlohmann::ordered_json res;
  res["vocab_size"] = vocab.size();
  res["initial_loss"] = r.initial_loss;
  res["final_loss"] = r.final_loss;
  res["encoder_checksum"] = detail::hex64(checksum(r.encoder.all_params()));
  write_manifest(dir, "pretrain", cfg, res);
  out << "pretrain  vocab=" << vocab.size() << "  initial_loss=" << std::fixed << std::setprecision(4)
      << r.initial_loss << "  final_loss=" << r.final_loss << "  (ln V = " << std::log(double(vocab.size())) << ")\n";
  return r;
}

// ---------------------------------------------------------------------------
// adapt / compare

/// The encoder an adaptation starts from: encoder.checkpoint when set,
/// otherwise a fresh pre-training run saved as encoder.stkt in `dir`.
inline EncoderModel<Float> obtain_encoder(const RunConfig& cfg, const Vocab& vocab, detail::OutDir& dir) {
  if (cfg.encoder_checkpoint.empty()) {
    auto r = pretrain_encoder(cfg, vocab);
    dir.write_bytes("encoder.stkt", save_checkpoint(r.encoder));
    dir.write("pretrain_metrics.jsonl", to_json_lines(r.history));
    return std::move(r.encoder);
  }
  require_file(cfg.encoder_checkpoint, "encoder.checkpoint");
  auto enc = load_checkpoint_file<Float>(cfg.encoder_checkpoint);
  if (enc.config().vocab_size != vocab.size()) {
    throw ConfigError("encoder checkpoint " + cfg.encoder_checkpoint + " has vocabulary size " +
                      std::to_string(enc.config().vocab_size) + " but the data vocabulary has " +
                      std::to_string(vocab.size()));
  }
  if (cfg.max_len > std::size_t(enc.config().max_seq_len)) {
    throw ConfigError("data.max_len exceeds the max_seq_len of " + cfg.encoder_checkpoint);
  }
  return enc;
}

/// Head for a strategy: finetune-only with head.kind=auto takes the light head.
inline HeadSpec head_for(const RunConfig& cfg, Strategy strategy, TaskKind task) {
  HeadSpec spec = cfg.head;
  spec.kind = strategy == Strategy::FinetuneOnly && cfg.head_kind == "auto" ? light_head_for(task)
                                                                              : resolve_head(cfg, task);
  if (strategy == Strategy::FinetuneOnly && !is_light_head(spec.kind)) {
    throw ConfigError(std::string("finetune-only trains a light head (fc-token or fc-cls), not ") +
                      to_string(spec.kind));
  }
  if (!head_fits_task(spec.kind, task)) {
    throw ConfigError(std::string("head ") + to_string(spec.kind) + " does not fit the " + to_string(task) + " task");
  }
  return spec;
}

struct AdaptOutcome {
  Strategy strategy = Strategy::StackAndFinetune;
  HeadKind head = HeadKind::FcCls;
  double phase1_lr = 0.0;
  double phase2_lr = 0.0;
  std::size_t grid_evaluated = 0;
  AdaptResult<Float> result;
};

/// One strategy, with an optional learning-rate grid search first (the
/// winning run is kept, not repeated).
inline AdaptOutcome adapt_one(const RunConfig& cfg, Strategy strategy, const EncoderModel<Float>& encoder,
                              const TaskData& data) {
  AdaptPlan plan = cfg.plan;
  plan.strategy = strategy;
  plan.seed = cfg.seed;
  AdaptOutcome o;
  o.strategy = strategy;
  const HeadSpec head = head_for(cfg, strategy, data.kind);
  o.head = head.kind;
  if (cfg.grid_budget == 0) {
    o.result = run_strategy(plan, encoder, head, data);
    o.phase1_lr = plan.phase1_lr;
    o.phase2_lr = plan.phase2_lr;
    return o;
  }
  std::optional<AdaptResult<Float>> best;
  const auto grid = grid_search(plan, plan.lr_grid_phase1, plan.lr_grid_phase2, cfg.grid_budget,
                                [&](const AdaptPlan& p) {
                                  auto r = run_strategy(p, encoder, head, data);
                                  const MetricRecord rec = r.best_val;
                                  if (!best || rec.accuracy > best->best_val.accuracy) best = std::move(r);
                                  return rec;
                                });
  o.result = std::move(*best);
  o.phase1_lr = grid.phase1_lr;
  o.phase2_lr = grid.phase2_lr;
  o.grid_evaluated = grid.evaluated;
  return o;
}

inline nlohmann::ordered_json outcome_json(const AdaptOutcome& o) {
  nlohmann::ordered_json j;
  j["strategy"] = to_string(o.strategy);
  j["head"] = to_string(o.head);
  j["phase1_lr"] = o.phase1_lr;
  j["phase2_lr"] = o.phase2_lr;
  if (o.grid_evaluated) j["grid_evaluated"] = o.grid_evaluated;
  j["best_val"] = detail::record_json(o.result.best_val);
  j["epochs"] = o.result.history.size() / 2;
  j["encoder_checksum_loaded"] = detail::hex64(o.result.encoder_checksum_loaded);
  if (o.result.encoder_checksum_after_phase1) {
    j["encoder_checksum_after_phase1"] = detail::hex64(*o.result.encoder_checksum_after_phase1);
  }
  j["freeze_held"] = o.result.freeze_held();
  return j;
}

inline void write_outcome(detail::OutDir& dir, const AdaptOutcome& o) {
  dir.write("metrics.jsonl", to_json_lines(o.result.history));
  dir.write_bytes("model.stkt", save_task_checkpoint(o.result.model));
}

inline std::string summary_header() {
  std::ostringstream os;
  os << std::left << std::setw(20) << "strategy" << std::setw(18) << "head" << std::right << std::setw(10)
     << "val_loss" << std::setw(10) << "val_acc" << std::setw(10) << "val_f1" << std::setw(8) << "epochs" << "\n";
  return os.str();
}

inline std::string summary_row(const AdaptOutcome& o) {
  const auto& b = o.result.best_val;
  std::ostringstream os;
  os << std::left << std::setw(20) << to_string(o.strategy) << std::setw(18) << to_string(o.head) << std::right
     << std::fixed << std::setprecision(4) << std::setw(10) << b.loss << std::setw(10) << b.accuracy
     << std::setw(10) << b.f1.value_or(0.0) << std::setw(8) << o.result.history.size() / 2 << "\n";
  return os.str();
}

inline AdaptOutcome cmd_adapt(const RunConfig& cfg, std::ostream& out = std::cout) {
  validate_config(cfg);
  thread_count();
  const Vocab vocab = build_vocab(cfg);
  const TaskData data = build_task_data(cfg, vocab);
  head_for(cfg, cfg.plan.strategy, data.kind);
  detail::OutDir dir(cfg.out);
  const auto encoder = obtain_encoder(cfg, vocab, dir);
  auto o = adapt_one(cfg, cfg.plan.strategy, encoder, data);
  write_outcome(dir, o);
  write_manifest(dir, "adapt", cfg, outcome_json(o));
  out << summary_header() << summary_row(o);
  return o;
}

/// All three strategies on one task and one encoder. Up to STACKTUNE_THREADS
/// strategies run at once; rows always print in strategy order.
inline std::vector<AdaptOutcome> cmd_compare(const RunConfig& cfg, std::ostream& out = std::cout) {
  validate_config(cfg);
  const int threads = thread_count();
  const Vocab vocab = build_vocab(cfg);
  const TaskData data = build_task_data(cfg, vocab);
  for (Strategy s : all_strategies()) head_for(cfg, s, data.kind);
  detail::OutDir dir(cfg.out);
  const auto encoder = obtain_encoder(cfg, vocab, dir);
  const auto& strategies = all_strategies();
  std::vector<AdaptOutcome> outcomes(strategies.size());
  std::vector<std::exception_ptr> errors(strategies.size());
  auto work = [&](std::size_t i) {
    try {
      outcomes[i] = adapt_one(cfg, strategies[i], encoder, data);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  for (std::size_t start = 0; start < strategies.size(); start += std::size_t(threads)) {
    const std::size_t end = std::min(strategies.size(), start + std::size_t(threads));
    if (end - start == 1) {
      work(start);
      continue;
    }
    std::vector<std::thread> pool;
    for (std::size_t i = start; i < end; ++i) pool.emplace_back(work, i);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  nlohmann::ordered_json res = nlohmann::ordered_json::array();
  std::string table = summary_header();
  for (const auto& o : outcomes) {
    auto sub = dir.sub(to_string(o.strategy));
    write_outcome(sub, o);
    res.push_back(outcome_json(o));
    table += summary_row(o);
  }
  dir.write("summary.txt", table);
  write_manifest(dir, "compare", cfg, res);
  out << table;
  return outcomes;
}

// ---------------------------------------------------------------------------
// ensemble

struct EnsembleOutcome {
  std::vector<double> member_accuracy;
  double ensemble_accuracy = 0.0;
  std::vector<int> predictions;
};

/// Loads the model an adapt run wrote to `member_dir` (its config.cfg and
/// model.stkt).
inline TaskModel<Float> load_member(const std::string& member_dir, const TaskData& data) {
  const std::string cfg_path = (std::filesystem::path(member_dir) / "config.cfg").string();
  const std::string model_path = (std::filesystem::path(member_dir) / "model.stkt").string();
  require_file(cfg_path, "ensemble member config");
  require_file(model_path, "ensemble member model");
  const RunConfig mc = load_config(cfg_path);
  if (parse_task_kind(mc.task) != data.kind) {
    throw ConfigError("ensemble member " + member_dir + " was trained on the " + mc.task + " task");
  }
  const auto bytes = read_file_bytes(model_path);
  const Checkpoint ckpt = parse_checkpoint(bytes);
  Rng rng(0);
  EncoderModel<Float> encoder(ckpt.config, rng);
  AdaptPlan plan = mc.plan;
  auto model = make_task_model(plan, encoder, head_for(mc, mc.plan.strategy, data.kind), data, rng);
  load_task_checkpoint(model, bytes);
  return model;
}

inline EnsembleOutcome cmd_ensemble(const RunConfig& cfg, std::vector<std::string> members,
                                    std::ostream& out = std::cout) {
  validate_config(cfg);
  thread_count();
  if (members.empty()) members = cfg.ensemble_members;
  if (members.empty()) throw ConfigError("ensemble needs at least one member (ensemble.members or --member)");
  if (parse_task_kind(cfg.task) == TaskKind::Tagging) {
    throw ConfigError("ensemble averages per-example class distributions; the tagging task has none");
  }
  const Vocab vocab = build_vocab(cfg);
  const TaskData data = build_task_data(cfg, vocab);
  std::vector<TaskModel<Float>> models;
  for (const auto& m : members) models.push_back(load_member(m, data));
  const std::size_t classes = data.num_classes();
  std::vector<int> gold;
  for (const auto& ex : data.val) gold.push_back(ex.label);
  auto accuracy = [&](const std::vector<int>& pred) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hit += pred[i] == gold[i];
    return double(hit) / double(gold.size());
  };
  EnsembleOutcome o;
  std::vector<std::vector<double>> probs;
  for (const auto& model : models) {
    probs.push_back(predict_proba(model, data.val, cfg.plan.batch_size));
    o.member_accuracy.push_back(accuracy(argmax_rows(probs.back(), gold.size(), classes)));
  }
  o.predictions = ensemble_predict(probs, classes);
  o.ensemble_accuracy = accuracy(o.predictions);

  detail::OutDir dir(cfg.out);
  std::string preds;
  for (int p : o.predictions) preds += data.label_names[std::size_t(p)] + "\n";
  dir.write("predictions.txt", preds);
  nlohmann::ordered_json res;
  res["members"] = members;
  res["member_accuracy"] = o.member_accuracy;
  res["ensemble_accuracy"] = o.ensemble_accuracy;
  dir.write("metrics.json", res.dump(2) + "\n");
  write_manifest(dir, "ensemble", cfg, res);
  out << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < members.size(); ++i) {
    out << "member " << i << "  val_acc=" << o.member_accuracy[i] << "  " << members[i] << "\n";
  }
  out << "ensemble  val_acc=" << o.ensemble_accuracy << "\n";
  return o;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOutcome {
  std::vector<gradcheck::Summary> summaries;
  bool passed() const {
    return std::all_of(summaries.begin(), summaries.end(), [](const auto& s) { return s.passed; });
  }
};

/// Every primitive and head case, `cases` draws each, seeded per case name.
inline GradcheckOutcome run_gradcheck_suite(std::uint64_t seed, std::size_t cases,
                                            const gradcheck::Options& opt = {},
                                            const std::function<void(const gradcheck::Summary&)>& on_done = {}) {
  GradcheckOutcome o;
  for (const auto& nc : gradcheck::all_cases()) {
    Rng rng(seed);
    o.summaries.push_back(gradcheck::run(nc.name, cases, rng, nc.make, opt));
    if (on_done) on_done(o.summaries.back());
  }
  return o;
}

inline std::string gradcheck_line(const gradcheck::Summary& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %s  cases=%zu  redraws=%zu  max_rel_err=%.3g", s.name.c_str(),
                s.passed ? "PASS" : "FAIL", s.cases, s.redraws, s.max_rel_error);
  std::string line = buf;
  if (!s.passed && !s.worst.empty()) line += "  " + s.worst;
  return line + "\n";
}

inline GradcheckOutcome cmd_gradcheck(const RunConfig& cfg, std::ostream& out = std::cout) {
  thread_count();
  detail::OutDir dir(cfg.out);
  std::string report;
  auto o = run_gradcheck_suite(cfg.seed, 100, {}, [&](const gradcheck::Summary& s) {
    report += gradcheck_line(s);
    out << gradcheck_line(s) << std::flush;
  });
  dir.write("gradcheck.txt", report);
  nlohmann::ordered_json res;
  res["passed"] = o.passed();
  for (const auto& s : o.summaries) res["max_rel_error"][s.name] = s.max_rel_error;
  write_manifest(dir, "gradcheck", cfg, res);
  out << (o.passed() ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return o;
}

// ---------------------------------------------------------------------------
// Dispatch

struct CommandLine {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> strategy;
  std::optional<std::string> head;
  std::vector<std::string> members;
};

/// Config file (or defaults) with the flag overrides applied.
inline RunConfig resolve_config(const CommandLine& cl) {
  RunConfig cfg;
  if (!cl.config_path.empty()) {
    require_file(cl.config_path, "config file");
    cfg = load_config(cl.config_path);
  }
  if (cl.seed) cfg.seed = *cl.seed;
  if (cl.out) cfg.out = *cl.out;
  if (cl.strategy) set_config_value(cfg, "adapt.strategy", *cl.strategy);
  if (cl.head) cfg.head_kind = *cl.head;
  return cfg;
}

/// Runs a command and maps failures to exit codes: 1 for invalid input or a
/// missing file, 2 for anything that goes wrong while running (including a
/// non-finite loss, whose message names the epoch and phase) and for a failed
/// gradient check.
inline int run_command(const CommandLine& cl, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    const RunConfig cfg = resolve_config(cl);
    if (cl.command == "pretrain") {
      cmd_pretrain(cfg, out);
    } else if (cl.command == "adapt") {
      cmd_adapt(cfg, out);
    } else if (cl.command == "compare") {
      cmd_compare(cfg, out);
    } else if (cl.command == "ensemble") {
      cmd_ensemble(cfg, cl.members, out);
    } else if (cl.command == "gradcheck") {
      if (!cmd_gradcheck(cfg, out).passed()) return kExitRuntime;
    } else {
      throw ConfigError("unknown command '" + cl.command + "'");
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const NonFiniteLoss& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace stacktune
