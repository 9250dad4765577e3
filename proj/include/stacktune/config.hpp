#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stacktune/adapt.hpp"
#include "stacktune/encoder.hpp"
#include "stacktune/heads.hpp"

namespace stacktune {

/// Bad user input: an invalid config value, an unknown key, a missing file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Every setting a command reads. Defaults describe a desk-scale synthetic run.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";

  // task data
  std::string task = "tagging";       // tagging | classification | pair
  std::string data_source = "synthetic";  // synthetic | files
  int train_size = 2000;
  int val_size = 500;
  int vocab_words = 200;
  std::size_t max_len = 64;
  std::string train_path;
  std::string val_path;
  std::string vocab_path;

  // encoder and pre-training
  EncoderConfig encoder{.vocab_size = 0, .hidden_dim = 32, .num_layers = 2, .num_attention_heads = 4,
                        .ffn_dim = 0, .max_seq_len = 64, .dropout_p = 0.1};
  std::string encoder_checkpoint;  // empty: pre-train first
  std::string pretrain_corpus = "auto";  // auto | bigram | tagging | classification | pair | text
  std::string pretrain_text_path;
  int pretrain_tokens = 48000;
  int pretrain_coverage = 0;  // bigram corpus over the first N words; 0 = all
  double pretrain_follow_p = 0.9;
  int pretrain_epochs = 20;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_batch_size = 32;
  std::size_t pretrain_seq_len = 16;
  double pretrain_mask_prob = 0.15;

  // head
  std::string head_kind = "auto";  // auto picks bilstm-tagger / densenet-cls / sim-transformer by task
  HeadSpec head;

  // adaptation
  AdaptPlan plan;
  std::size_t grid_budget = 0;  // > 0 runs a learning-rate grid search first

  // ensemble
  std::vector<std::string> ensemble_members;  // output directories of adapt runs
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class N>
Field number(std::string key, N RunConfig::*member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<N>(key, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return format_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

inline Field text(std::string key, std::string RunConfig::*member) {
  return {key, [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

// Accessors for nested structs, which member pointers cannot reach directly.
template <class N, class Get>
Field nested(std::string key, Get get) {
  return {key, [key, get](RunConfig& c, const std::string& v) { get(c) = parse_number<N>(key, v); },
          [get](const RunConfig& c) {
            const N v = get(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<N>) return format_double(v);
            else return std::to_string(v);
          }};
}

inline Field lr_grid(std::string key, std::vector<double> AdaptPlan::*member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            std::vector<double> grid;
            for (const auto& item : split_list(v)) grid.push_back(parse_number<double>(key, item));
            c.plan.*member = grid;
          },
          [member](const RunConfig& c) {
            std::vector<std::string> items;
            for (double x : c.plan.*member) items.push_back(format_double(x));
            return join(items);
          }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(number("seed", &RunConfig::seed));
    f.push_back(text("out", &RunConfig::out));
    f.push_back(text("task", &RunConfig::task));
    f.push_back(text("data.source", &RunConfig::data_source));
    f.push_back(number("data.train_size", &RunConfig::train_size));
    f.push_back(number("data.val_size", &RunConfig::val_size));
    f.push_back(number("data.vocab_words", &RunConfig::vocab_words));
    f.push_back(number("data.max_len", &RunConfig::max_len));
    f.push_back(text("data.train_path", &RunConfig::train_path));
    f.push_back(text("data.val_path", &RunConfig::val_path));
    f.push_back(text("data.vocab_path", &RunConfig::vocab_path));
    f.push_back(nested<int>("encoder.hidden_dim", [](RunConfig& c) -> int& { return c.encoder.hidden_dim; }));
    f.push_back(nested<int>("encoder.num_layers", [](RunConfig& c) -> int& { return c.encoder.num_layers; }));
    f.push_back(nested<int>("encoder.num_attention_heads",
                            [](RunConfig& c) -> int& { return c.encoder.num_attention_heads; }));
    f.push_back(nested<int>("encoder.ffn_dim", [](RunConfig& c) -> int& { return c.encoder.ffn_dim; }));
    f.push_back(nested<int>("encoder.max_seq_len", [](RunConfig& c) -> int& { return c.encoder.max_seq_len; }));
    f.push_back(nested<double>("encoder.dropout_p", [](RunConfig& c) -> double& { return c.encoder.dropout_p; }));
    f.push_back(text("encoder.checkpoint", &RunConfig::encoder_checkpoint));
    f.push_back(text("pretrain.corpus", &RunConfig::pretrain_corpus));
    f.push_back(text("pretrain.text_path", &RunConfig::pretrain_text_path));
    f.push_back(number("pretrain.tokens", &RunConfig::pretrain_tokens));
    f.push_back(number("pretrain.coverage", &RunConfig::pretrain_coverage));
    f.push_back(number("pretrain.follow_p", &RunConfig::pretrain_follow_p));
    f.push_back(number("pretrain.epochs", &RunConfig::pretrain_epochs));
    f.push_back(number("pretrain.lr", &RunConfig::pretrain_lr));
    f.push_back(number("pretrain.batch_size", &RunConfig::pretrain_batch_size));
    f.push_back(number("pretrain.seq_len", &RunConfig::pretrain_seq_len));
    f.push_back(number("pretrain.mask_prob", &RunConfig::pretrain_mask_prob));
    f.push_back(text("head.kind", &RunConfig::head_kind));
    f.push_back(nested<int>("head.hidden", [](RunConfig& c) -> int& { return c.head.hidden; }));
    f.push_back(nested<int>("head.lstm_hidden", [](RunConfig& c) -> int& { return c.head.lstm_hidden; }));
    f.push_back(nested<int>("head.perspectives", [](RunConfig& c) -> int& { return c.head.perspectives; }));
    f.push_back(nested<int>("head.attention_heads", [](RunConfig& c) -> int& { return c.head.attention_heads; }));
    f.push_back(nested<int>("head.fc_layers", [](RunConfig& c) -> int& { return c.head.fc_layers; }));
    f.push_back(nested<double>("head.dropout_p", [](RunConfig& c) -> double& { return c.head.dropout_p; }));
    f.push_back({"adapt.strategy",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.plan.strategy = parse_strategy(v);
                   } catch (const Error& e) {
                     throw ConfigError(std::string("config: ") + e.what());
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.plan.strategy)); }});
    f.push_back(nested<double>("adapt.phase1_lr", [](RunConfig& c) -> double& { return c.plan.phase1_lr; }));
    f.push_back(nested<double>("adapt.phase2_lr", [](RunConfig& c) -> double& { return c.plan.phase2_lr; }));
    f.push_back(lr_grid("adapt.lr_grid_phase1", &AdaptPlan::lr_grid_phase1));
    f.push_back(lr_grid("adapt.lr_grid_phase2", &AdaptPlan::lr_grid_phase2));
    f.push_back(nested<double>("adapt.gap_threshold", [](RunConfig& c) -> double& { return c.plan.gap_threshold; }));
    f.push_back(nested<int>("adapt.patience", [](RunConfig& c) -> int& { return c.plan.patience; }));
    f.push_back(nested<int>("adapt.phase2_patience", [](RunConfig& c) -> int& { return c.plan.phase2_patience; }));
    f.push_back(
        nested<int>("adapt.max_epochs_phase1", [](RunConfig& c) -> int& { return c.plan.max_epochs_phase1; }));
    f.push_back(
        nested<int>("adapt.max_epochs_phase2", [](RunConfig& c) -> int& { return c.plan.max_epochs_phase2; }));
    f.push_back(nested<std::size_t>("adapt.batch_size", [](RunConfig& c) -> std::size_t& { return c.plan.batch_size; }));
    f.push_back({"adapt.record_wall_time",
                 [](RunConfig& c, const std::string& v) {
                   c.plan.record_wall_time = parse_bool("adapt.record_wall_time", v);
                 },
                 [](const RunConfig& c) { return std::string(c.plan.record_wall_time ? "true" : "false"); }});
    f.push_back(number("adapt.grid_budget", &RunConfig::grid_budget));
    f.push_back({"ensemble.members",
                 [](RunConfig& c, const std::string& v) { c.ensemble_members = split_list(v); },
                 [](const RunConfig& c) { return join(c.ensemble_members); }});
    return f;
  }();
  return all;
}

}  // namespace detail

/// Sets one key; unknown keys and malformed values throw ConfigError.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

/// Parses `key = value` lines. '#' starts a comment; blank lines are skipped.
/// `origin` prefixes error messages (usually the file path).
inline RunConfig parse_config(const std::string& text, const std::string& origin = "config",
                              RunConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(where + ": key '" + key + "' already set on line " + std::to_string(it->second));
    }
    seen[key] = line_no;
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

/// Every key with its current value, one `key = value` per line in a fixed
/// order. parse_config of this text reproduces the config.
inline std::string config_to_string(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

/// FNV-1a of the canonical text.
inline std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : config_to_string(cfg)) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.push_back(f.key);
  return keys;
}

/// The head a config selects for its task.
inline HeadKind resolve_head(const RunConfig& cfg, TaskKind task) {
  if (cfg.head_kind != "auto") {
    try {
      return parse_head_kind(cfg.head_kind);
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  switch (task) {
    case TaskKind::Tagging: return HeadKind::BiLstmTagger;
    case TaskKind::Classification: return HeadKind::DenseNetCls;
    case TaskKind::Pair: return HeadKind::SimTransformer;
  }
  return HeadKind::FcCls;
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "tagging") return TaskKind::Tagging;
  if (s == "classification") return TaskKind::Classification;
  if (s == "pair") return TaskKind::Pair;
  throw ConfigError("config: unknown task '" + s + "' (expected tagging, classification or pair)");
}

/// Cross-field checks that do not depend on any file.
inline void validate_config(const RunConfig& cfg) {
  auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
  parse_task_kind(cfg.task);
  if (cfg.data_source != "synthetic" && cfg.data_source != "files") fail("data.source must be synthetic or files");
  if (cfg.out.empty()) fail("out must not be empty");
  if (cfg.data_source == "synthetic") {
    if (cfg.train_size < 1 || cfg.val_size < 1) fail("data.train_size and data.val_size must be positive");
    if (cfg.vocab_words < 40) fail("data.vocab_words must be at least 40");
  }
  if (cfg.max_len < 2) fail("data.max_len must be at least 2");
  if (cfg.max_len > std::size_t(cfg.encoder.max_seq_len)) fail("data.max_len exceeds encoder.max_seq_len");
  const std::vector<std::string> corpora{"auto", "bigram", "tagging", "classification", "pair", "text"};
  if (std::find(corpora.begin(), corpora.end(), cfg.pretrain_corpus) == corpora.end()) {
    fail("pretrain.corpus must be one of auto, bigram, tagging, classification, pair, text");
  }
  if (cfg.pretrain_tokens < 1 || cfg.pretrain_epochs < 0) fail("pretrain sizes must be positive");
  if (cfg.pretrain_coverage < 0 || cfg.pretrain_coverage > cfg.vocab_words) {
    fail("pretrain.coverage must be in [0, data.vocab_words]");
  }
  if (cfg.pretrain_seq_len < 2 || cfg.pretrain_seq_len > std::size_t(cfg.encoder.max_seq_len)) {
    fail("pretrain.seq_len must be in [2, encoder.max_seq_len]");
  }
  if (cfg.pretrain_batch_size < 1) fail("pretrain.batch_size must be positive");
  try {
    cfg.plan.validate();
    cfg.head.validate();
    EncoderConfig enc = cfg.encoder;
    enc.vocab_size = kNumSpecialIds + 1;
    enc.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const TaskKind task = parse_task_kind(cfg.task);
  const HeadKind head = resolve_head(cfg, task);
  if (!head_fits_task(head, task)) {
    fail(std::string("head ") + to_string(head) + " does not fit the " + cfg.task + " task");
  }
}

}  // namespace stacktune
