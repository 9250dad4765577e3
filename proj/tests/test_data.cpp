#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "stacktune.hpp"

using namespace stacktune;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::path(::testing::TempDir()) / name;
  std::ofstream(path) << text;
  return path.string();
}

int word(const std::string& tok) { return SyntheticLexicon::word_index(tok); }

// Tags implied by the labelling rule, recomputed from the tokens alone.
std::vector<std::string> rule_tags(const std::vector<std::string>& tokens, const SyntheticLexicon& lex) {
  std::vector<std::string> tags(tokens.size(), "O");
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (!lex.is_entity(word(tokens[i]))) {
      ++i;
      continue;
    }
    const bool loc = i > 0 && lex.is_trigger(word(tokens[i - 1]));
    const std::string type = loc ? "LOC" : "PER";
    std::size_t j = i;
    while (j < tokens.size() && lex.is_entity(word(tokens[j]))) {
      tags[j] = (j == i ? "B-" : "I-") + type;
      ++j;
    }
    i = j;
  }
  return tags;
}

}  // namespace

TEST(Vocab, ReservedIdsComeFirst) {
  const Vocab v = Vocab::synthetic(3);
  EXPECT_EQ(v.size(), 8);
  EXPECT_EQ(v.id("[PAD]"), kPadId);
  EXPECT_EQ(v.id("[CLS]"), kClsId);
  EXPECT_EQ(v.id("[MASK]"), kMaskId);
  EXPECT_EQ(v.id("w0"), kNumSpecialIds);
  EXPECT_EQ(v.id("unseen"), kUnkId);
  EXPECT_THROW(v.token(8), Error);
}

TEST(Vocab, BuildRespectsMinFreqAndOrder) {
  const Vocab v = Vocab::build({{"b", "a", "b"}, {"c", "a", "b"}}, 2);
  EXPECT_EQ(v.size(), kNumSpecialIds + 2);
  EXPECT_EQ(v.token(kNumSpecialIds), "b");
  EXPECT_EQ(v.token(kNumSpecialIds + 1), "a");
  EXPECT_FALSE(v.contains("c"));
}

TEST(Vocab, SaveLoadRoundTrip) {
  const Vocab v = Vocab::build({{"x", "y", "z"}});
  const auto path = (std::filesystem::path(::testing::TempDir()) / "vocab.txt").string();
  v.save(path);
  const Vocab back = Vocab::load(path);
  ASSERT_EQ(back.size(), v.size());
  for (int i = 0; i < v.size(); ++i) EXPECT_EQ(back.token(i), v.token(i));
  const auto bad = write_temp("bad_vocab.txt", "[PAD]\n[SEP]\n");
  EXPECT_THROW(Vocab::load(bad), Error);
}

TEST(Encoding, TokenizeLowercasesAndSplits) {
  EXPECT_EQ(tokenize("  The CAT\tsat \n"), (std::vector<std::string>{"the", "cat", "sat"}));
}

TEST(Encoding, ClsPrefixAndTruncation) {
  const Vocab v = Vocab::synthetic(5);
  EXPECT_EQ(encode_tokens({"w1", "w2", "zz"}, v, 10), (std::vector<int>{kClsId, 6, 7, kUnkId}));
  EXPECT_EQ(encode_tokens({"w1", "w2", "w3"}, v, 3), (std::vector<int>{kClsId, 6, 7}));
  EXPECT_EQ(encode_pair_joint({"w0"}, {"w4", "w3"}, v, 10),
            (std::vector<int>{kClsId, 5, kSepId, 9, 8, kSepId}));
  EXPECT_EQ(pad_row({1, 2}, 4), (std::vector<int>{1, 2, kPadId, kPadId}));
}

TEST(Spans, BioDecoding) {
  using S = SpanLabel;
  EXPECT_EQ(bio_to_spans({"B-PER", "I-PER", "O", "B-LOC"}), (std::vector<S>{{0, 2, "PER"}, {3, 4, "LOC"}}));
  // I- continuing a different type, or after O, opens a new span.
  EXPECT_EQ(bio_to_spans({"B-PER", "I-LOC", "O", "I-PER"}),
            (std::vector<S>{{0, 1, "PER"}, {1, 2, "LOC"}, {3, 4, "PER"}}));
  EXPECT_EQ(bio_to_spans({"B-PER", "B-PER"}), (std::vector<S>{{0, 1, "PER"}, {1, 2, "PER"}}));
  EXPECT_TRUE(bio_to_spans({"O", "O"}).empty());
}

TEST(Loaders, Conll) {
  const auto path = write_temp("a.conll", "-DOCSTART- O\n\nJohn B-PER\nlives O\nin O\nParis B-LOC\n\n\nHi O\n");
  const auto s = load_conll(path);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].tokens, (std::vector<std::string>{"John", "lives", "in", "Paris"}));
  EXPECT_EQ(s[0].tags[3], "B-LOC");
  EXPECT_EQ(tag_inventory(s), (std::vector<std::string>{"O", "B-LOC", "B-PER"}));
  const auto bad = write_temp("bad.conll", "John B-PER extra\n");
  try {
    load_conll(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(bad + ":1"), std::string::npos);
  }
  EXPECT_THROW(load_conll("/nonexistent/file.conll"), Error);
}

TEST(Loaders, PairAndClassTsv) {
  const auto pairs = load_pair_tsv(write_temp("p.tsv", "A b\tc D\t1\r\nx\ty\t0\n"));
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].a, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(pairs[0].label, 1);
  EXPECT_THROW(load_pair_tsv(write_temp("p2.tsv", "x\ty\t2\n")), Error);

  const auto cls = load_class_tsv(write_temp("c.tsv", "good film\tpos\nbad\tneg\nok\tpos\n"));
  EXPECT_EQ(cls.label_names, (std::vector<std::string>{"neg", "pos"}));
  EXPECT_EQ(cls.examples[0].label, 1);
  EXPECT_EQ(cls.examples[1].label, 0);
  EXPECT_THROW(load_class_tsv(write_temp("c2.tsv", "x\tmaybe\n"), {"neg", "pos"}), Error);
}

TEST(Synthetic, TaggingFollowsTheRule) {
  const auto ds = gen_synthetic(SyntheticTask::Tagging, 500, 200, 11);
  const SyntheticLexicon lex(200);
  std::size_t loc = 0, per = 0;
  for (const auto& s : ds.tagging) {
    ASSERT_EQ(s.tags, rule_tags(s.tokens, lex));
    EXPECT_GE(s.tokens.size(), 8u);
    for (const auto& sp : bio_to_spans(s.tags)) (sp.label == "LOC" ? loc : per)++;
  }
  // Both types occur in similar numbers, so context matters for the label.
  EXPECT_GT(loc, 300u);
  EXPECT_NEAR(double(loc) / double(loc + per), 0.5, 0.05);
}

TEST(Synthetic, ClassificationFollowsTheRule) {
  const auto ds = gen_synthetic(SyntheticTask::Classification, 400, 200, 12);
  const SyntheticLexicon lex(200);
  int positives = 0;
  for (const auto& e : ds.classification) {
    int a = 0, b = 0;
    for (const auto& t : e.tokens) {
      a += lex.in_group_a(word(t));
      b += lex.in_group_b(word(t));
    }
    EXPECT_EQ(e.label, a > b ? 1 : 0);
    positives += e.label;
  }
  EXPECT_EQ(positives, 200);
}

TEST(Synthetic, PairOverlapSeparatesLabels) {
  const auto ds = gen_synthetic(SyntheticTask::Pair, 400, 200, 13);
  int positives = 0;
  for (const auto& p : ds.pairs) {
    const double overlap = token_overlap(p.a, p.b);
    if (p.label == 1) {
      EXPECT_GE(overlap, 0.6);
    } else {
      EXPECT_EQ(overlap, 0.0);
    }
    positives += p.label;
  }
  EXPECT_EQ(positives, 200);
}

TEST(Synthetic, SeededAndReproducible) {
  const auto a = gen_synthetic(SyntheticTask::Pair, 50, 100, 5);
  const auto b = gen_synthetic(SyntheticTask::Pair, 50, 100, 5);
  const auto c = gen_synthetic(SyntheticTask::Pair, 50, 100, 6);
  EXPECT_EQ(a.pairs[7].a, b.pairs[7].a);
  EXPECT_NE(a.pairs[7].a, c.pairs[7].a);
  EXPECT_THROW(gen_synthetic(SyntheticTask::Pair, 10, 20, 1), Error);
}

TEST(Synthetic, BigramCorpusFollowsSuccessorChain) {
  const auto corpus = gen_bigram_corpus(5000, 50, 3, 0.9);
  ASSERT_EQ(corpus.size(), 5000u);
  // For each word, its most frequent successor takes about 90% (+ 10%/50).
  std::map<int, std::map<int, int>> next;
  for (std::size_t i = 0; i + 1 < corpus.size(); ++i) next[corpus[i]][corpus[i + 1]]++;
  int top = 0, total = 0;
  for (const auto& [w, counts] : next) {
    int best = 0;
    for (const auto& [_, n] : counts) {
      best = std::max(best, n);
      total += n;
    }
    top += best;
  }
  EXPECT_NEAR(double(top) / double(total), 0.9 + 0.1 / 50, 0.02);
  for (int id : corpus) {
    EXPECT_GE(id, kNumSpecialIds);
    EXPECT_LT(id, kNumSpecialIds + 50);
  }
}

TEST(Overlap, MultisetIntersection) {
  EXPECT_DOUBLE_EQ(token_overlap({"a", "a", "b"}, {"a", "c"}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(token_overlap({"a", "b"}, {"b", "a"}), 1.0);
  EXPECT_EQ(token_overlap({}, {"a"}), 0.0);
}
