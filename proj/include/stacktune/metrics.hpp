#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "stacktune/tensor.hpp"

namespace stacktune {

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error("unknown split '" + s + "'");
}

/// One evaluation snapshot. phase 0 is pre-training, 1 the frozen-encoder
/// phase, 2 joint fine-tuning.
struct MetricRecord {
  int epoch = 0;
  int phase = 0;
  Split split = Split::Train;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> f1;
  std::int64_t wall_ms = 0;

  bool operator==(const MetricRecord&) const = default;
};

/// Single JSON object, fields in a fixed order: epoch, phase, split, loss,
/// accuracy, f1, wall_ms. An absent f1 is written as null.
inline std::string to_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["split"] = to_string(r.split);
  j["loss"] = r.loss;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1 ? nlohmann::ordered_json(*r.f1) : nlohmann::ordered_json(nullptr);
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

inline MetricRecord from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.phase = j.at("phase").get<int>();
  r.split = parse_split(j.at("split").get<std::string>());
  r.loss = j.at("loss").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  if (!j.at("f1").is_null()) r.f1 = j.at("f1").get<double>();
  r.wall_ms = j.at("wall_ms").get<std::int64_t>();
  return r;
}

inline std::string to_json_lines(const std::vector<MetricRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json_line(r) + "\n";
  return out;
}

struct SpanLabel {
  int start = 0;
  int end = 0;  // exclusive
  std::string label;

  auto operator<=>(const SpanLabel&) const = default;
};

/// Micro-averaged exact-match F1 over (start, end, label) spans, summed over
/// all sentences. Returns 0 when precision + recall is 0.
inline double entity_f1(const std::vector<std::vector<SpanLabel>>& pred,
                        const std::vector<std::vector<SpanLabel>>& gold) {
  if (pred.size() != gold.size()) {
    throw Error("entity_f1: " + std::to_string(pred.size()) + " predicted sentences vs " +
                std::to_string(gold.size()) + " gold");
  }
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::set<SpanLabel> p(pred[i].begin(), pred[i].end());
    const std::set<SpanLabel> g(gold[i].begin(), gold[i].end());
    n_pred += p.size();
    n_gold += g.size();
    for (const auto& s : p) tp += g.count(s);
  }
  const double precision = n_pred ? double(tp) / double(n_pred) : 0.0;
  const double recall = n_gold ? double(tp) / double(n_gold) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

/// Confusion matrix with rows = gold, columns = predicted.
struct Confusion {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  explicit Confusion(std::size_t n) : classes(n), counts(n * n, 0) {}

  void add(int gold, int pred) { counts[std::size_t(gold) * classes + std::size_t(pred)]++; }

  std::size_t at(std::size_t gold, std::size_t pred) const { return counts[gold * classes + pred]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  double accuracy() const {
    std::size_t diag = 0;
    for (std::size_t k = 0; k < classes; ++k) diag += at(k, k);
    const std::size_t n = total();
    return n ? double(diag) / double(n) : 0.0;
  }

  /// Unweighted mean of per-class F1 over classes that occur in gold or predictions.
  double macro_f1() const {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      std::size_t tp = at(k, k), fp = 0, fn = 0;
      for (std::size_t j = 0; j < classes; ++j) {
        if (j == k) continue;
        fp += at(j, k);
        fn += at(k, j);
      }
      if (tp + fp + fn == 0) continue;
      sum += 2.0 * double(tp) / double(2 * tp + fp + fn);
      ++used;
    }
    return used ? sum / double(used) : 0.0;
  }
};

/// Fraction of positions where pred == gold, skipping gold == ignore.
inline double token_accuracy(const std::vector<int>& pred, const std::vector<int>& gold,
                             int ignore = -100) {
  if (pred.size() != gold.size()) throw Error("token_accuracy: length mismatch");
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gold[i] == ignore) continue;
    hit += pred[i] == gold[i];
    ++n;
  }
  return n ? double(hit) / double(n) : 0.0;
}

/// Row-wise argmax over a [rows, cols] buffer; ties go to the lowest index.
template <class T>
std::vector<int> argmax_rows(const std::vector<T>& values, std::size_t rows, std::size_t cols) {
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (values[r * cols + c] > values[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace stacktune
