#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "stacktune/encoder.hpp"
#include "stacktune/metrics.hpp"
#include "stacktune/rng.hpp"

namespace stacktune {

// ---------------------------------------------------------------------------
// Vocabulary and tokenization

inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> names{"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};
  return names;
}

/// Token <-> id map. Ids 0-4 are the reserved tokens; the rest follow in
/// insertion order.
class Vocab {
 public:
  Vocab() {
    for (const auto& t : reserved_tokens()) add(t);
  }

  /// Tokens seen at least `min_freq` times, in order of first appearance.
  static Vocab build(const std::vector<std::vector<std::string>>& corpus, int min_freq = 1) {
    std::unordered_map<std::string, int> freq;
    std::vector<std::string> order;
    for (const auto& sentence : corpus) {
      for (const auto& tok : sentence) {
        if (freq[tok]++ == 0) order.push_back(tok);
      }
    }
    Vocab v;
    for (const auto& tok : order) {
      if (freq[tok] >= min_freq) v.add(tok);
    }
    return v;
  }

  /// "w0" .. "w{n-1}" at ids 5 .. n+4.
  static Vocab synthetic(int n) {
    Vocab v;
    for (int i = 0; i < n; ++i) v.add(synthetic_word(i));
    return v;
  }

  static std::string synthetic_word(int i) { return "w" + std::to_string(i); }

  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  const std::string& token(int id) const {
    if (id < 0 || std::size_t(id) >= tokens_.size()) {
      throw Error("vocab: id " + std::to_string(id) + " out of range for size " + std::to_string(tokens_.size()));
    }
    return tokens_[std::size_t(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  /// One token per line, in id order.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    Vocab v;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      if (line_no < kNumSpecialIds) {
        if (line != reserved_tokens()[std::size_t(line_no)]) {
          throw Error(path + ":" + std::to_string(line_no + 1) + ": expected reserved token " +
                      reserved_tokens()[std::size_t(line_no)]);
        }
      } else if (v.add(line) != line_no) {
        throw Error(path + ":" + std::to_string(line_no + 1) + ": duplicate token '" + line + "'");
      }
      ++line_no;
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Whitespace split with ASCII lower-casing.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::transform(tok.begin(), tok.end(), tok.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(tok);
  }
  return out;
}

/// [CLS] t1 .. tn, cut to at most max_len ids (from the right).
inline std::vector<int> encode_tokens(const std::vector<std::string>& tokens, const Vocab& vocab,
                                      std::size_t max_len) {
  std::vector<int> ids{kClsId};
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

/// [CLS] A [SEP] B [SEP], cut to at most max_len ids (from the right).
inline std::vector<int> encode_pair_joint(const std::vector<std::string>& a, const std::vector<std::string>& b,
                                          const Vocab& vocab, std::size_t max_len) {
  std::vector<int> ids{kClsId};
  for (const auto& t : a) ids.push_back(vocab.id(t));
  ids.push_back(kSepId);
  for (const auto& t : b) ids.push_back(vocab.id(t));
  ids.push_back(kSepId);
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

/// Right-pads an encoded row with [PAD] to exactly `len` ids.
inline std::vector<int> pad_row(std::vector<int> ids, std::size_t len) {
  if (ids.size() > len) ids.resize(len);
  ids.resize(len, kPadId);
  return ids;
}

inline std::vector<std::string> decode(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

// ---------------------------------------------------------------------------
// Examples and loaders

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

struct PairExample {
  std::vector<std::string> a;
  std::vector<std::string> b;
  int label = 0;
};

struct ClassExample {
  std::vector<std::string> tokens;
  int label = 0;
};

/// BIO tags to spans. An I- tag that does not continue a span of the same
/// type opens a new one.
inline std::vector<SpanLabel> bio_to_spans(const std::vector<std::string>& tags) {
  std::vector<SpanLabel> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    const bool begin = tag.rfind("B-", 0) == 0;
    const bool inside = tag.rfind("I-", 0) == 0;
    if (!begin && !inside) {
      open = false;
      continue;
    }
    const std::string type = tag.substr(2);
    if (inside && open && spans.back().label == type) {
      spans.back().end = int(i) + 1;
      continue;
    }
    spans.push_back({int(i), int(i) + 1, type});
    open = true;
  }
  return spans;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  return in;
}

}  // namespace detail

/// Two-column CoNLL: "token tag" per line, blank lines between sentences,
/// -DOCSTART- lines skipped. Tokens are kept verbatim.
inline std::vector<TaggedSentence> load_conll(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<TaggedSentence> out;
  TaggedSentence current;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!current.tokens.empty()) out.push_back(std::move(current));
    current = {};
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    std::istringstream fields(line);
    std::vector<std::string> cols;
    for (std::string f; fields >> f;) cols.push_back(f);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols[0].rfind("-DOCSTART-", 0) == 0) continue;
    if (cols.size() != 2) {
      throw Error(path + ":" + std::to_string(line_no) + ": expected 2 columns, found " +
                  std::to_string(cols.size()));
    }
    current.tokens.push_back(cols[0]);
    current.tags.push_back(cols[1]);
  }
  flush();
  return out;
}

/// textA <TAB> textB <TAB> {0|1}
inline std::vector<PairExample> load_pair_tsv(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<PairExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cols = detail::split_tabs(line);
    if (cols.size() != 3 || (cols[2] != "0" && cols[2] != "1")) {
      throw Error(path + ":" + std::to_string(line_no) + ": expected textA<TAB>textB<TAB>{0|1}");
    }
    out.push_back({tokenize(cols[0]), tokenize(cols[1]), cols[2] == "1" ? 1 : 0});
  }
  return out;
}

struct ClassDataset {
  std::vector<ClassExample> examples;
  std::vector<std::string> label_names;  // sorted; label ids index this list
};

/// text <TAB> label. Label ids follow the sorted set of label strings, or the
/// given `labels` when non-empty (other labels are then rejected).
inline ClassDataset load_class_tsv(const std::string& path, std::vector<std::string> labels = {}) {
  auto in = detail::open_input(path);
  std::vector<std::pair<std::vector<std::string>, std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cols = detail::split_tabs(line);
    if (cols.size() != 2 || cols[1].empty()) {
      throw Error(path + ":" + std::to_string(line_no) + ": expected text<TAB>label");
    }
    if (!labels.empty() && std::find(labels.begin(), labels.end(), cols[1]) == labels.end()) {
      throw Error(path + ":" + std::to_string(line_no) + ": label '" + cols[1] + "' is not declared");
    }
    rows.emplace_back(tokenize(cols[0]), cols[1]);
  }
  ClassDataset ds;
  if (labels.empty()) {
    for (const auto& r : rows) labels.push_back(r.second);
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  ds.label_names = labels;
  for (auto& r : rows) {
    const auto pos = std::find(labels.begin(), labels.end(), r.second) - labels.begin();
    ds.examples.push_back({std::move(r.first), static_cast<int>(pos)});
  }
  return ds;
}

/// Sorted tag inventory with "O" first.
inline std::vector<std::string> tag_inventory(const std::vector<TaggedSentence>& sentences) {
  std::vector<std::string> tags;
  for (const auto& s : sentences) tags.insert(tags.end(), s.tags.begin(), s.tags.end());
  tags.push_back("O");
  std::sort(tags.begin(), tags.end(), [](const std::string& a, const std::string& b) {
    if ((a == "O") != (b == "O")) return a == "O";
    return a < b;
  });
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
  return tags;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class SyntheticTask { Tagging, Classification, Pair };

inline const char* to_string(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::Tagging: return "tagging";
    case SyntheticTask::Classification: return "classification";
    case SyntheticTask::Pair: return "pair";
  }
  return "?";
}

inline SyntheticTask parse_synthetic_task(const std::string& s) {
  if (s == "tagging") return SyntheticTask::Tagging;
  if (s == "classification") return SyntheticTask::Classification;
  if (s == "pair") return SyntheticTask::Pair;
  throw Error("unknown synthetic task '" + s + "' (expected tagging, classification or pair)");
}

/// Partition of the synthetic word indices 0 .. n-1 into the roles the
/// generators use. Every role is a contiguous block so membership tests are
/// cheap and the layout is easy to state.
struct SyntheticLexicon {
  int words = 0;
  // tagging
  int entity_begin = 0, entity_end = 0;    // entity lexicon
  int trigger_begin = 0, trigger_end = 0;  // location triggers
  // classification
  int group_a_begin = 0, group_a_end = 0;
  int group_b_begin = 0, group_b_end = 0;
  // everything else is filler

  explicit SyntheticLexicon(int n) : words(n) {
    if (n < 40) throw Error("synthetic tasks need at least 40 words, got " + std::to_string(n));
    const int lex = std::max(2, n / 8);
    const int trig = std::max(2, n / 25);
    const int group = std::max(2, n / 20);
    entity_begin = 0;
    entity_end = lex;
    trigger_begin = entity_end;
    trigger_end = trigger_begin + trig;
    group_a_begin = trigger_end;
    group_a_end = group_a_begin + group;
    group_b_begin = group_a_end;
    group_b_end = group_b_begin + group;
  }

  bool is_entity(int w) const { return w >= entity_begin && w < entity_end; }
  bool is_trigger(int w) const { return w >= trigger_begin && w < trigger_end; }
  bool in_group_a(int w) const { return w >= group_a_begin && w < group_a_end; }
  bool in_group_b(int w) const { return w >= group_b_begin && w < group_b_end; }
  bool is_filler(int w) const { return w >= trigger_end; }

  static int word_index(const std::string& tok) {
    if (tok.size() < 2 || tok[0] != 'w') return -1;
    for (std::size_t i = 1; i < tok.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(tok[i]))) return -1;
    }
    return std::stoi(tok.substr(1));
  }
};

struct SyntheticOptions {
  int min_len = 8;
  int max_len = 16;
  double entity_rate = 0.25;  // chance that a segment is an entity
};

struct SyntheticDataset {
  SyntheticTask task = SyntheticTask::Tagging;
  std::vector<std::string> label_names;
  std::vector<TaggedSentence> tagging;
  std::vector<ClassExample> classification;
  std::vector<PairExample> pairs;

  std::size_t size() const {
    switch (task) {
      case SyntheticTask::Tagging: return tagging.size();
      case SyntheticTask::Classification: return classification.size();
      case SyntheticTask::Pair: return pairs.size();
    }
    return 0;
  }
};

namespace detail {

inline int draw_range(Rng& rng, int begin, int end) { return begin + int(rng.below(std::uint64_t(end - begin))); }

// Filler word from [trigger_end, words).
inline int draw_filler(Rng& rng, const SyntheticLexicon& lex) { return draw_range(rng, lex.trigger_end, lex.words); }

// Tagging sentence built from segments:
//   entity:  [trigger] e1 .. ek      (LOC when the trigger is present, else PER)
//   filler:  [distractor trigger] f1 .. fm
// An entity is always followed by a filler segment, so runs of lexicon words
// are maximal, and a PER entity is never directly preceded by a trigger.
inline TaggedSentence gen_tagged(Rng& rng, const SyntheticLexicon& lex, const SyntheticOptions& opt,
                                 std::size_t& loc_count, std::size_t& per_count) {
  TaggedSentence s;
  const int target = draw_range(rng, opt.min_len, opt.max_len + 1);
  auto push = [&](int w, std::string tag) {
    s.tokens.push_back(Vocab::synthetic_word(w));
    s.tags.push_back(std::move(tag));
  };
  bool last_was_entity = false;
  while (int(s.tokens.size()) < target) {
    const bool entity = !last_was_entity && rng.bernoulli(opt.entity_rate);
    if (entity) {
      // Alternate types to keep PER and LOC balanced.
      const bool loc = loc_count < per_count || (loc_count == per_count && rng.bernoulli(0.5));
      const std::string type = loc ? "LOC" : "PER";
      if (loc) {
        push(draw_range(rng, lex.trigger_begin, lex.trigger_end), "O");
        ++loc_count;
      } else {
        ++per_count;
      }
      const int k = draw_range(rng, 1, 4);
      for (int i = 0; i < k; ++i) {
        push(draw_range(rng, lex.entity_begin, lex.entity_end), (i == 0 ? "B-" : "I-") + type);
      }
      last_was_entity = true;
    } else {
      if (rng.bernoulli(0.3)) push(draw_range(rng, lex.trigger_begin, lex.trigger_end), "O");
      const int m = draw_range(rng, 1, 3);
      for (int i = 0; i < m; ++i) push(draw_filler(rng, lex), "O");
      last_was_entity = false;
    }
  }
  // A trailing entity is already maximal; a trailing trigger is harmless.
  return s;
}

inline ClassExample gen_classification(Rng& rng, const SyntheticLexicon& lex, const SyntheticOptions& opt,
                                       int label) {
  const int len = draw_range(rng, opt.min_len, opt.max_len + 1);
  // Counts of group words with count(A) > count(B) exactly when label == 1.
  int hi = draw_range(rng, 1, 4);
  int lo = draw_range(rng, 0, hi);
  const int n_a = label == 1 ? hi : lo;
  const int n_b = label == 1 ? lo : hi;
  std::vector<int> words;
  for (int i = 0; i < n_a; ++i) words.push_back(draw_range(rng, lex.group_a_begin, lex.group_a_end));
  for (int i = 0; i < n_b; ++i) words.push_back(draw_range(rng, lex.group_b_begin, lex.group_b_end));
  while (int(words.size()) < len) {
    int w;
    do {
      w = draw_filler(rng, lex);
    } while (lex.in_group_a(w) || lex.in_group_b(w));
    words.push_back(w);
  }
  rng.shuffle(std::span<int>(words));
  ClassExample ex;
  ex.label = label;
  for (int w : words) ex.tokens.push_back(Vocab::synthetic_word(w));
  return ex;
}

// Positive: a permutation of A with floor(0.4 L) positions replaced by words
// absent from A. Negative: a fresh draw sharing no word with A.
inline PairExample gen_pair(Rng& rng, const SyntheticLexicon& lex, const SyntheticOptions& opt, int label) {
  const int len = draw_range(rng, opt.min_len, opt.max_len + 1);
  std::vector<int> a(static_cast<std::size_t>(len));
  for (auto& w : a) w = draw_filler(rng, lex);
  auto absent = [&](const std::vector<int>& from) {
    int w;
    do {
      w = draw_filler(rng, lex);
    } while (std::find(from.begin(), from.end(), w) != from.end());
    return w;
  };
  std::vector<int> b;
  if (label == 1) {
    b = a;
    rng.shuffle(std::span<int>(b));
    const int replace = (2 * len) / 5;
    std::vector<std::size_t> positions(b.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    rng.shuffle(std::span<std::size_t>(positions));
    for (int i = 0; i < replace; ++i) b[positions[std::size_t(i)]] = absent(a);
  } else {
    const int len_b = draw_range(rng, opt.min_len, opt.max_len + 1);
    for (int i = 0; i < len_b; ++i) b.push_back(absent(a));
  }
  PairExample ex;
  ex.label = label;
  for (int w : a) ex.a.push_back(Vocab::synthetic_word(w));
  for (int w : b) ex.b.push_back(Vocab::synthetic_word(w));
  return ex;
}

}  // namespace detail

/// Deterministic synthetic dataset over the words "w0" .. "w{vocab_words-1}".
///   tagging:        maximal runs of entity-lexicon words are entities; LOC when
///                   the word right before the run is a trigger, PER otherwise.
///   classification: label 1 iff the text holds more group-A than group-B words.
///   pair:           label 1 pairs share at least 60% of their tokens, label 0
///                   pairs share none.
/// Labels of the classification and pair tasks are exactly balanced.
inline SyntheticDataset gen_synthetic(SyntheticTask task, std::size_t size, int vocab_words, std::uint64_t seed,
                                      const SyntheticOptions& opt = {}) {
  if (size == 0) throw Error("gen_synthetic: size must be positive");
  if (opt.min_len < 1 || opt.max_len < opt.min_len) throw Error("gen_synthetic: bad length range");
  const SyntheticLexicon lex(vocab_words);
  Rng rng(seed);
  SyntheticDataset ds;
  ds.task = task;
  std::vector<int> labels(size);
  for (std::size_t i = 0; i < size; ++i) labels[i] = int(i % 2);
  rng.shuffle(std::span<int>(labels));
  switch (task) {
    case SyntheticTask::Tagging: {
      ds.label_names = {"O", "B-LOC", "B-PER", "I-LOC", "I-PER"};
      std::size_t loc = 0, per = 0;
      for (std::size_t i = 0; i < size; ++i) ds.tagging.push_back(detail::gen_tagged(rng, lex, opt, loc, per));
      break;
    }
    case SyntheticTask::Classification:
      ds.label_names = {"0", "1"};
      for (std::size_t i = 0; i < size; ++i) {
        ds.classification.push_back(detail::gen_classification(rng, lex, opt, labels[i]));
      }
      break;
    case SyntheticTask::Pair:
      ds.label_names = {"0", "1"};
      for (std::size_t i = 0; i < size; ++i) ds.pairs.push_back(detail::gen_pair(rng, lex, opt, labels[i]));
      break;
  }
  return ds;
}

/// Token stream for masked-LM pre-training over word ids 5 .. vocab_words+4.
/// Each word is followed by its fixed successor (a seeded permutation) with
/// probability `follow_p`, otherwise by a uniform draw.
inline std::vector<int> gen_bigram_corpus(std::size_t tokens, int vocab_words, std::uint64_t seed,
                                          double follow_p = 0.9) {
  if (vocab_words < 2) throw Error("gen_bigram_corpus: need at least 2 words");
  Rng rng(seed);
  std::vector<int> successor(static_cast<std::size_t>(vocab_words));
  for (int i = 0; i < vocab_words; ++i) successor[std::size_t(i)] = i;
  rng.shuffle(std::span<int>(successor));
  std::vector<int> out;
  out.reserve(tokens);
  int w = int(rng.below(std::uint64_t(vocab_words)));
  for (std::size_t i = 0; i < tokens; ++i) {
    out.push_back(kNumSpecialIds + w);
    w = rng.bernoulli(follow_p) ? successor[std::size_t(w)] : int(rng.below(std::uint64_t(vocab_words)));
  }
  return out;
}

/// Multiset intersection size divided by |a|.
inline double token_overlap(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : b) counts[t]++;
  std::size_t shared = 0;
  for (const auto& t : a) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++shared;
    }
  }
  return double(shared) / double(a.size());
}

}  // namespace stacktune
