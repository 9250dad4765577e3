#include <gtest/gtest.h>

#include <cmath>

#include "stacktune.hpp"

using namespace stacktune;

namespace {

// One train and one val record per epoch, given as accuracy pairs.
std::vector<MetricRecord> history_of(const std::vector<std::pair<double, double>>& epochs) {
  std::vector<MetricRecord> h;
  int e = 0;
  for (const auto& [train, val] : epochs) {
    ++e;
    h.push_back({e, 1, Split::Train, 0.0, train});
    h.push_back({e, 1, Split::Val, 0.0, val});
  }
  return h;
}

struct Tiny {
  Vocab vocab = Vocab::synthetic(40);
  TaskData data;
  EncoderModel<float> encoder;

  explicit Tiny(SyntheticTask task) {
    data = make_task_data(gen_synthetic(task, 40, 40, 1), gen_synthetic(task, 20, 40, 2), vocab, 24);
    EncoderConfig c;
    c.vocab_size = vocab.size();
    c.hidden_dim = 8;
    c.num_layers = 1;
    c.num_attention_heads = 2;
    c.max_seq_len = 24;
    Rng rng(3);
    encoder = EncoderModel<float>(c, rng);
  }
};

AdaptPlan tiny_plan(Strategy s) {
  AdaptPlan p;
  p.strategy = s;
  p.phase1_lr = 1e-2;
  p.phase2_lr = 1e-3;
  p.max_epochs_phase1 = 3;
  p.max_epochs_phase2 = 2;
  p.batch_size = 8;
  return p;
}

HeadSpec head_of(HeadKind k) {
  HeadSpec s;
  s.kind = k;
  s.hidden = 8;
  s.lstm_hidden = 4;
  s.perspectives = 2;
  s.attention_heads = 2;
  return s;
}

}  // namespace

TEST(SwitchPhase, TruthTable) {
  // gap 0.9 - 0.8 = 0.1 > 0.05
  EXPECT_TRUE(switch_phase(history_of({{0.9, 0.8}}), 0.05, 2));
  // gap equal to gamma does not fire
  EXPECT_FALSE(switch_phase(history_of({{0.75, 0.5}}), 0.25, 2));
  // plateau: best val 0.6 at epoch 1, not beaten in the last two epochs
  EXPECT_TRUE(switch_phase(history_of({{0.6, 0.6}, {0.6, 0.55}, {0.6, 0.6}}), 0.5, 2));
  // improvement in the last epoch
  EXPECT_FALSE(switch_phase(history_of({{0.6, 0.6}, {0.6, 0.55}, {0.62, 0.61}}), 0.5, 2));
  // fewer epochs than patience + 1 cannot plateau
  EXPECT_FALSE(switch_phase(history_of({{0.5, 0.5}, {0.5, 0.5}}), 0.5, 2));
  // both conditions
  EXPECT_TRUE(switch_phase(history_of({{0.6, 0.6}, {0.9, 0.5}}), 0.1, 1));
}

TEST(SwitchPhase, InterleavingDoesNotMatter) {
  auto h = history_of({{0.6, 0.6}, {0.6, 0.55}, {0.6, 0.6}});
  std::stable_partition(h.begin(), h.end(), [](const MetricRecord& r) { return r.split == Split::Val; });
  EXPECT_TRUE(switch_phase(h, 0.5, 2));
}

TEST(SwitchPhase, RejectsMalformedHistory) {
  EXPECT_THROW(switch_phase({}, 0.1, 1), Error);
  EXPECT_THROW(switch_phase(history_of({{0.5, 0.5}}), 0.1, 0), Error);
  auto h = history_of({{0.5, 0.5}});
  h.pop_back();
  EXPECT_THROW(switch_phase(h, 0.1, 1), Error);
}

TEST(Ensemble, MeanOfMembersIsADistribution) {
  const std::vector<std::vector<double>> members{{0.7, 0.3, 0.2, 0.8}, {0.4, 0.6, 0.5, 0.5}};
  const auto mean = ensemble_mean(members, 2);
  EXPECT_DOUBLE_EQ(mean[0], 0.55);
  EXPECT_DOUBLE_EQ(mean[3], 0.65);
  EXPECT_DOUBLE_EQ(mean[0] + mean[1], 1.0);
  EXPECT_EQ(ensemble_predict(members, 2), (std::vector<int>{0, 1}));
  // equal mean goes to class 0
  EXPECT_EQ(ensemble_predict({{0.5, 0.5}}, 2), (std::vector<int>{0}));
}

TEST(Ensemble, RejectsBadInput) {
  EXPECT_THROW(ensemble_mean({}, 2), Error);
  EXPECT_THROW(ensemble_mean({{0.5, 0.5}, {1.0}}, 2), Error);
  EXPECT_THROW(ensemble_mean({{0.5, 0.6}}, 2), Error);
  EXPECT_THROW(ensemble_mean({{1.5, -0.5}}, 2), Error);
  EXPECT_THROW(ensemble_mean({{0.2, 0.3, 0.5}}, 2), Error);
}

TEST(GridSearch, OrderBudgetAndTies) {
  AdaptPlan base;
  std::vector<std::pair<double, double>> seen;
  auto runner = [&](const AdaptPlan& p) {
    seen.emplace_back(p.phase1_lr, p.phase2_lr);
    MetricRecord r;
    r.accuracy = p.phase1_lr == 2.0 ? 0.9 : 0.5;
    return r;
  };
  const auto g = grid_search(base, {1.0, 2.0}, {10.0, 20.0}, 3, runner);
  EXPECT_EQ(seen, (std::vector<std::pair<double, double>>{{1.0, 10.0}, {1.0, 20.0}, {2.0, 10.0}}));
  EXPECT_EQ(g.evaluated, 3u);
  EXPECT_EQ(g.phase1_lr, 2.0);
  EXPECT_EQ(g.phase2_lr, 10.0);

  seen.clear();
  const auto flat = grid_search(base, {1.0, 1.0}, {10.0, 20.0}, 10, runner);
  EXPECT_EQ(flat.evaluated, 4u);
  EXPECT_EQ(flat.phase2_lr, 10.0);  // ties keep the first pair

  base.strategy = Strategy::StackOnly;
  seen.clear();
  grid_search(base, {1.0, 2.0}, {10.0, 20.0}, 10, runner);
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_THROW(grid_search(base, {1.0}, {1.0}, 0, runner), Error);
}

TEST(RunStrategy, StackAndFinetuneKeepsEncoderFrozenInPhaseOne) {
  Tiny t(SyntheticTask::Classification);
  const auto r = run_strategy(tiny_plan(Strategy::StackAndFinetune), t.encoder, head_of(HeadKind::FcCls), t.data);
  ASSERT_TRUE(r.encoder_checksum_after_phase1.has_value());
  EXPECT_TRUE(r.freeze_held());
  EXPECT_EQ(r.encoder_checksum_loaded, checksum(t.encoder.encoder_params()));
  bool saw1 = false, saw2 = false;
  for (const auto& rec : r.history) {
    saw1 |= rec.phase == 1;
    saw2 |= rec.phase == 2;
    EXPECT_EQ(rec.wall_ms, 0);
  }
  EXPECT_TRUE(saw1 && saw2);
  EXPECT_EQ(r.history.front().epoch, 1);
  // phase 2 updated the encoder copy
  EXPECT_NE(checksum(r.model.encoder.encoder_params()), r.encoder_checksum_loaded);
}

TEST(RunStrategy, StackOnlyRestoresBestValCheckpoint) {
  Tiny t(SyntheticTask::Classification);
  auto plan = tiny_plan(Strategy::StackOnly);
  const auto r = run_strategy(plan, t.encoder, head_of(HeadKind::DenseNetCls), t.data);
  EXPECT_TRUE(r.freeze_held());
  EXPECT_EQ(checksum(r.model.encoder.encoder_params()), r.encoder_checksum_loaded);
  double best = 0.0;
  for (const auto& rec : r.history) {
    EXPECT_EQ(rec.phase, 1);
    if (rec.split == Split::Val) best = std::max(best, rec.accuracy);
  }
  EXPECT_EQ(r.best_val.accuracy, best);
  const auto ev = evaluate(r.model, t.data.val, t.data.label_names, 8);
  EXPECT_NEAR(ev.accuracy, best, 1e-12);
}

TEST(RunStrategy, SameSeedSameResult) {
  Tiny t(SyntheticTask::Tagging);
  const auto plan = tiny_plan(Strategy::StackAndFinetune);
  const auto a = run_strategy(plan, t.encoder, head_of(HeadKind::BiLstmTagger), t.data);
  const auto b = run_strategy(plan, t.encoder, head_of(HeadKind::BiLstmTagger), t.data);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(save_task_checkpoint(a.model), save_task_checkpoint(b.model));
  ASSERT_TRUE(a.history.front().f1.has_value());
}

TEST(RunStrategy, RejectsMismatchedHeads) {
  Tiny t(SyntheticTask::Classification);
  EXPECT_THROW(run_strategy(tiny_plan(Strategy::FinetuneOnly), t.encoder, head_of(HeadKind::DenseNetCls), t.data),
               Error);
  EXPECT_THROW(run_strategy(tiny_plan(Strategy::StackOnly), t.encoder, head_of(HeadKind::FcToken), t.data), Error);
  EXPECT_THROW(run_strategy(tiny_plan(Strategy::StackOnly), t.encoder, head_of(HeadKind::Bimpm), t.data), Error);
}

TEST(RunStrategy, HugeLearningRateReportsEpochAndPhase) {
  Tiny t(SyntheticTask::Classification);
  auto plan = tiny_plan(Strategy::FinetuneOnly);
  plan.phase2_lr = 1e30;
  try {
    run_strategy(plan, t.encoder, head_of(HeadKind::FcCls), t.data);
    FAIL() << "expected a non-finite loss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.phase(), 2);
    EXPECT_GE(e.epoch(), 1);
  }
}

TEST(TaskCheckpoint, RoundTrip) {
  Tiny t(SyntheticTask::Pair);
  const auto r = run_strategy(tiny_plan(Strategy::StackOnly), t.encoder, head_of(HeadKind::SimTransformer), t.data);
  const auto bytes = save_task_checkpoint(r.model);
  Rng rng(99);
  auto fresh = make_task_model(tiny_plan(Strategy::StackOnly), t.encoder, head_of(HeadKind::SimTransformer), t.data, rng);
  load_task_checkpoint(fresh, bytes);
  EXPECT_EQ(save_task_checkpoint(fresh), bytes);
  EXPECT_EQ(predict_proba(fresh, t.data.val, 8), predict_proba(r.model, t.data.val, 8));
}
