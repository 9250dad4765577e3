#include <gtest/gtest.h>

#include "stacktune.hpp"

using namespace stacktune;

namespace {

std::vector<std::vector<SpanLabel>> spans_of(const std::vector<std::vector<std::string>>& tags) {
  std::vector<std::vector<SpanLabel>> out;
  for (const auto& t : tags) out.push_back(bio_to_spans(t));
  return out;
}

}  // namespace

TEST(EntityF1, HandCountedFixture) {
  const std::vector<std::vector<std::string>> gold{
      {"B-PER", "I-PER", "O", "B-LOC"},
      {"O", "B-LOC", "I-LOC", "O"},
      {"B-PER", "O", "B-PER", "O"},
  };
  const std::vector<std::vector<std::string>> pred{
      {"B-PER", "I-PER", "O", "B-PER"},  // 1 hit, 1 wrong type
      {"O", "B-LOC", "O", "O"},          // boundary error
      {"B-PER", "O", "B-PER", "B-LOC"},  // 2 hits, 1 spurious
  };
  // gold spans 5, predicted 6, exact matches 3.
  const double p = 3.0 / 6.0, r = 3.0 / 5.0;
  EXPECT_DOUBLE_EQ(entity_f1(spans_of(pred), spans_of(gold)), 2 * p * r / (p + r));
}

TEST(EntityF1, EdgeCases) {
  const auto gold = spans_of({{"B-PER", "O"}});
  EXPECT_EQ(entity_f1(gold, gold), 1.0);
  EXPECT_EQ(entity_f1(spans_of({{"O", "O"}}), gold), 0.0);
  EXPECT_EQ(entity_f1(spans_of({{"O"}}), spans_of({{"O"}})), 0.0);
  EXPECT_THROW(entity_f1(gold, {}), Error);
}

TEST(TokenAccuracy, SkipsIgnoredPositions) {
  EXPECT_DOUBLE_EQ(token_accuracy({1, 2, 3, 0}, {1, -100, 0, 0}), 2.0 / 3.0);
  EXPECT_EQ(token_accuracy({1}, {-100}), 0.0);
  EXPECT_THROW(token_accuracy({1, 2}, {1}), Error);
}

TEST(TokenAccuracy, AgreesWithConfusionDiagonal) {
  const std::vector<int> gold{0, 1, 2, 2, 1, 0, 0, 2, 1, 1};
  const std::vector<int> pred{0, 1, 1, 2, 1, 2, 0, 2, 0, 1};
  Confusion cm(3);
  for (std::size_t i = 0; i < gold.size(); ++i) cm.add(gold[i], pred[i]);
  EXPECT_EQ(cm.total(), 10u);
  EXPECT_EQ(cm.at(2, 1), 1u);
  EXPECT_DOUBLE_EQ(cm.accuracy(), 0.7);
  EXPECT_DOUBLE_EQ(token_accuracy(pred, gold), cm.accuracy());
}

TEST(Confusion, MacroF1ByHand) {
  Confusion cm(3);
  // class 0: tp 2 fp 1 fn 1; class 1: tp 1 fp 1 fn 1; class 2 absent.
  cm.add(0, 0);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 0);
  cm.add(1, 1);
  const double f0 = 2.0 * 2 / (2 * 2 + 1 + 1);
  const double f1 = 2.0 * 1 / (2 * 1 + 1 + 1);
  EXPECT_DOUBLE_EQ(cm.macro_f1(), (f0 + f1) / 2.0);
  EXPECT_EQ(Confusion(2).macro_f1(), 0.0);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax_rows(std::vector<double>{1, 3, 3, 0, -1, -1}, 2, 3), (std::vector<int>{1, 0}));
}

TEST(MetricRecord, JsonLineRoundTrip) {
  MetricRecord r{3, 2, Split::Val, 0.125, 0.75, 0.5, 42};
  const auto line = to_json_line(r);
  EXPECT_EQ(line, R"({"epoch":3,"phase":2,"split":"val","loss":0.125,"accuracy":0.75,"f1":0.5,"wall_ms":42})");
  EXPECT_EQ(from_json_line(line), r);
  r.f1.reset();
  EXPECT_NE(to_json_line(r).find("\"f1\":null"), std::string::npos);
  EXPECT_EQ(from_json_line(to_json_line(r)), r);
  EXPECT_THROW(parse_split("dev"), Error);
}
