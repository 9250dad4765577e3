// Acceptance suite: one [PASS]/[FAIL] line per criterion, each with its
// pinned tolerance. Exits non-zero when any criterion fails.
//
//   acceptance <work_dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "stacktune.hpp"

using namespace stacktune;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.4f", x);
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr int kSeeds = 5;

// Freeze checks gathered from every run that has a frozen phase.
struct FreezeLog {
  int runs = 0;
  int held = 0;
  std::vector<std::string> broken;

  void add(const std::string& label, const AdaptResult<Float>& r) {
    ++runs;
    const bool ok = r.encoder_checksum_after_phase1 && *r.encoder_checksum_after_phase1 == r.encoder_checksum_loaded;
    if (ok) {
      ++held;
    } else {
      broken.push_back(label);
    }
  }
};

// Pre-trains with `cfg`, saves the checkpoint under `dir` and returns the
// encoder loaded back from that file.
EncoderModel<Float> pretrain_and_reload(const RunConfig& cfg, const fs::path& dir) {
  const Vocab vocab = build_vocab(cfg);
  auto r = pretrain_encoder(cfg, vocab);
  fs::create_directories(dir);
  const auto path = (dir / "encoder.stkt").string();
  write_file_bytes(path, save_checkpoint(r.encoder));
  progress(fmt("pretrained %s: mlm loss %.3f -> %.3f", path.c_str(), r.initial_loss, r.final_loss));
  return load_checkpoint_file<Float>(path);
}

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t failed = 0;
  double worst = 0.0;
  std::string worst_name;
  const auto o = run_gradcheck_suite(42, 100, {}, [&](const gradcheck::Summary& s) {
    if (!s.passed) {
      ++failed;
      progress("gradcheck FAIL " + gradcheck_line(s));
    }
    if (s.max_rel_error > worst) {
      worst = s.max_rel_error;
      worst_name = s.name;
    }
  });
  const double secs = seconds_since(t0);
  const std::size_t total = o.summaries.size();
  std::size_t cases = 0;
  for (const auto& s : o.summaries) cases = std::max(cases, s.cases);
  const bool ok = failed == 0 && secs < 300.0;
  return {1, "gradient suite", ok,
          fmt("%zu/%zu cases (primitives + heads) pass, 100 draws each, worst rel err %.2e (%s) <= 1e-4, "
              "%.0f s < 300 s",
              total - failed, total, worst, worst_name.c_str(), secs)};
}

RunConfig bigram_pretrain_config() {
  RunConfig cfg;
  cfg.task = "classification";
  cfg.vocab_words = 200;
  cfg.encoder.hidden_dim = 64;
  cfg.encoder.num_layers = 2;
  cfg.encoder.num_attention_heads = 4;
  cfg.pretrain_corpus = "bigram";
  cfg.pretrain_tokens = 10000;
  cfg.pretrain_epochs = 20;
  cfg.pretrain_lr = 1e-3;
  cfg.pretrain_seq_len = 16;
  cfg.pretrain_batch_size = 32;
  return cfg;
}

Verdict pretraining() {
  const auto t0 = Clock::now();
  const RunConfig cfg = bigram_pretrain_config();
  const Vocab vocab = build_vocab(cfg);
  const auto r = pretrain_encoder(cfg, vocab);
  const double secs = seconds_since(t0);
  const double ln_v = std::log(double(vocab.size()));
  int epochs = 0;
  for (const auto& rec : r.history) epochs = std::max(epochs, rec.epoch);
  const bool ok = std::abs(r.initial_loss - ln_v) <= 0.15 && r.final_loss <= 0.5 * ln_v && epochs <= 20 && secs < 300;
  return {3, "pretraining", ok,
          fmt("V=%d ln V=%.3f: initial %.3f within +-0.15, final %.3f <= %.3f after %d epochs, %.0f s < 300 s",
              vocab.size(), ln_v, r.initial_loss, r.final_loss, 0.5 * ln_v, epochs, secs)};
}

RunConfig experiment_a_config() {
  RunConfig cfg;
  cfg.task = "tagging";
  cfg.train_size = 2000;
  cfg.val_size = 500;
  cfg.vocab_words = 200;
  cfg.max_len = 64;
  cfg.encoder.hidden_dim = 32;
  cfg.pretrain_corpus = "tagging";
  cfg.pretrain_tokens = 48000;
  cfg.pretrain_epochs = 20;
  cfg.pretrain_lr = 1e-3;
  cfg.pretrain_seq_len = 16;
  cfg.plan.phase1_lr = 1e-3;
  cfg.plan.phase2_lr = 1e-3;
  cfg.plan.max_epochs_phase1 = 15;
  cfg.plan.max_epochs_phase2 = 15;
  return cfg;
}

Verdict experiment_a(const fs::path& work, FreezeLog& freeze) {
  const auto t0 = Clock::now();
  RunConfig cfg = experiment_a_config();
  const auto encoder = pretrain_and_reload(cfg, work / "experiment_a");
  const Vocab vocab = build_vocab(cfg);
  std::vector<double> f1_sf, f1_ft, acc_sf, acc_ft;
  for (int seed = 0; seed < kSeeds; ++seed) {
    cfg.seed = std::uint64_t(seed);
    const TaskData data = build_task_data(cfg, vocab);
    const auto sf = adapt_one(cfg, Strategy::StackAndFinetune, encoder, data);
    const auto ft = adapt_one(cfg, Strategy::FinetuneOnly, encoder, data);
    freeze.add(fmt("experiment A seed %d stack-and-finetune", seed), sf.result);
    f1_sf.push_back(sf.result.best_val.f1.value_or(0.0));
    f1_ft.push_back(ft.result.best_val.f1.value_or(0.0));
    acc_sf.push_back(sf.result.best_val.accuracy);
    acc_ft.push_back(ft.result.best_val.accuracy);
    progress(fmt("experiment A seed %d: S&F(%s) f1 %.4f acc %.4f | FT(%s) f1 %.4f acc %.4f", seed,
                 to_string(sf.head), f1_sf.back(), acc_sf.back(), to_string(ft.head), f1_ft.back(), acc_ft.back()));
  }
  const double secs = seconds_since(t0);
  const double gap = mean(f1_sf) - mean(f1_ft);
  const bool ok = gap >= 0.01 && mean(acc_sf) >= 0.90 && mean(acc_ft) >= 0.90 && secs < 900;
  return {4, "experiment A (tagging)", ok,
          fmt("mean entity F1 S&F(bilstm-tagger) %.4f vs finetune-only(fc-token) %.4f, gap %+.4f >= +0.01; "
              "mean token acc %.4f / %.4f >= 0.90; %.0f s < 900 s [F1 S&F: %s | FT: %s]",
              mean(f1_sf), mean(f1_ft), gap, mean(acc_sf), mean(acc_ft), secs, list(f1_sf).c_str(),
              list(f1_ft).c_str())};
}

RunConfig experiment_c_config() {
  RunConfig cfg;
  cfg.task = "pair";
  cfg.train_size = 2000;
  cfg.val_size = 500;
  cfg.vocab_words = 200;
  cfg.max_len = 64;
  cfg.encoder.hidden_dim = 32;
  cfg.pretrain_corpus = "bigram";
  cfg.pretrain_coverage = 100;
  cfg.pretrain_tokens = 20000;
  cfg.pretrain_epochs = 20;
  cfg.pretrain_lr = 1e-3;
  cfg.pretrain_seq_len = 16;
  cfg.head_kind = "sim-transformer";
  cfg.plan.phase1_lr = 1e-3;
  cfg.plan.phase2_lr = 1e-4;
  cfg.plan.max_epochs_phase1 = 10;
  cfg.plan.max_epochs_phase2 = 15;
  return cfg;
}

Verdict experiment_c(const fs::path& work, FreezeLog& freeze) {
  const auto t0 = Clock::now();
  RunConfig cfg = experiment_c_config();
  const auto encoder = pretrain_and_reload(cfg, work / "experiment_c");
  const Vocab vocab = build_vocab(cfg);
  std::vector<double> sf_acc, so_acc;
  for (int seed = 0; seed < kSeeds; ++seed) {
    cfg.seed = std::uint64_t(seed);
    const TaskData data = build_task_data(cfg, vocab);
    const auto sf = adapt_one(cfg, Strategy::StackAndFinetune, encoder, data);
    const auto so = adapt_one(cfg, Strategy::StackOnly, encoder, data);
    freeze.add(fmt("experiment C seed %d stack-and-finetune", seed), sf.result);
    freeze.add(fmt("experiment C seed %d stack-only", seed), so.result);
    sf_acc.push_back(sf.result.best_val.accuracy);
    so_acc.push_back(so.result.best_val.accuracy);
    progress(fmt("experiment C seed %d: S&F %.4f | stack-only %.4f", seed, sf_acc.back(), so_acc.back()));
  }
  const double secs = seconds_since(t0);
  const double gap = mean(sf_acc) - mean(so_acc);
  const bool ok = gap >= 0.02 && secs < 1200;
  return {5, "experiment C (pair, sim-transformer)", ok,
          fmt("mean val acc S&F %.4f vs stack-only %.4f, gap %+.4f >= +0.02; %.0f s < 1200 s [S&F: %s | SO: %s]",
              mean(sf_acc), mean(so_acc), gap, secs, list(sf_acc).c_str(), list(so_acc).c_str())};
}

Verdict freeze_verdict(const FreezeLog& f) {
  std::string detail = fmt("%d/%d runs with a frozen phase end it with the loaded encoder checksum (bit-exact)",
                           f.held, f.runs);
  for (const auto& b : f.broken) detail += "; broken: " + b;
  return {2, "encoder freeze", f.runs > 0 && f.held == f.runs, detail};
}

// ---------------------------------------------------------------------------

// Argmax of the member mean computed row by row, independently of the library.
std::vector<int> brute_force_ensemble(const std::vector<std::vector<double>>& members, std::size_t rows,
                                      std::size_t classes) {
  std::vector<int> out;
  for (std::size_t r = 0; r < rows; ++r) {
    int best = -1;
    double best_p = -1.0;
    for (std::size_t c = 0; c < classes; ++c) {
      double p = 0.0;
      for (const auto& m : members) p += m[r * classes + c];
      if (p > best_p) {
        best_p = p;
        best = int(c);
      }
    }
    out.push_back(best);
  }
  return out;
}

Verdict ensemble_fixture() {
  constexpr std::size_t kRows = 30, kClasses = 3, kMembers = 3;
  std::vector<int> gold(kRows);
  for (std::size_t r = 0; r < kRows; ++r) gold[r] = int((r * 7) % kClasses);
  // Member m errs on rows r % 3 == m, putting modest weight on a wrong class;
  // elsewhere it is confidently right. The error sets are disjoint.
  std::vector<std::vector<double>> members(kMembers, std::vector<double>(kRows * kClasses));
  for (std::size_t m = 0; m < kMembers; ++m) {
    for (std::size_t r = 0; r < kRows; ++r) {
      const std::size_t g = std::size_t(gold[r]);
      const std::size_t wrong = (g + 1) % kClasses, other = (g + 2) % kClasses;
      double* row = &members[m][r * kClasses];
      if (r % kMembers == m) {
        row[wrong] = 0.45, row[g] = 0.35, row[other] = 0.20;
      } else {
        row[g] = 0.80, row[wrong] = 0.10, row[other] = 0.10;
      }
    }
  }
  auto accuracy = [&](const std::vector<int>& pred) {
    std::size_t hit = 0;
    for (std::size_t r = 0; r < kRows; ++r) hit += pred[r] == gold[r];
    return double(hit) / double(kRows);
  };
  double best_member = 0.0;
  for (const auto& m : members) best_member = std::max(best_member, accuracy(argmax_rows(m, kRows, kClasses)));
  const auto pred = ensemble_predict(members, kClasses);
  const auto oracle = brute_force_ensemble(members, kRows, kClasses);
  const double ens = accuracy(pred);
  bool ok = ens >= best_member && pred == oracle;

  // Simplex and permutation invariance, on the fixture and on random members.
  Rng rng(17);
  std::size_t simplex_bad = 0, perm_bad = 0, oracle_bad = 0;
  auto check = [&](std::vector<std::vector<double>> ms, std::size_t rows, std::size_t classes) {
    const auto mean_p = ensemble_mean(ms, classes);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = mean_p[r * classes + c];
        if (p < 0.0 || p > 1.0) ++simplex_bad;
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-12) ++simplex_bad;
    }
    const auto ref = ensemble_predict(ms, classes);
    if (ref != brute_force_ensemble(ms, rows, classes)) ++oracle_bad;
    std::vector<std::size_t> order(ms.size());
    std::iota(order.begin(), order.end(), 0);
    do {
      std::vector<std::vector<double>> permuted;
      for (auto i : order) permuted.push_back(ms[i]);
      if (ensemble_predict(permuted, classes) != ref) ++perm_bad;
    } while (std::next_permutation(order.begin(), order.end()));
  };
  check(members, kRows, kClasses);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.below(20), classes = 2 + rng.below(4), n = 1 + rng.below(4);
    std::vector<std::vector<double>> ms(n, std::vector<double>(rows * classes));
    for (auto& m : ms) {
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) s += (m[r * classes + c] = rng.uniform(0.01, 1.0));
        for (std::size_t c = 0; c < classes; ++c) m[r * classes + c] /= s;
      }
    }
    check(ms, rows, classes);
  }
  ok = ok && simplex_bad == 0 && perm_bad == 0 && oracle_bad == 0;
  return {6, "ensemble", ok,
          fmt("disjoint-error fixture: ensemble acc %.4f >= best member %.4f, predictions %s brute-force oracle; "
              "201 member sets: %zu simplex violations (tol 1e-12), %zu permutation changes, %zu oracle mismatches",
              ens, best_member, pred == oracle ? "match" : "DIFFER from", simplex_bad, perm_bad, oracle_bad)};
}

Verdict metric_fixtures() {
  std::size_t mismatches = 0;
  std::string first;
  auto expect = [&](const std::string& what, double got, double want) {
    if (got != want) {
      if (first.empty()) first = fmt("%s: got %.17g want %.17g", what.c_str(), got, want);
      ++mismatches;
    }
  };
  // Entity F1 against hand counts: (pred tags, gold tags, tp, predicted spans, gold spans).
  struct F1Case {
    std::vector<std::vector<std::string>> pred, gold;
    int tp, n_pred, n_gold;
  };
  const std::vector<F1Case> f1_cases{
      {{{"B-PER", "I-PER", "O", "B-LOC"}}, {{"B-PER", "I-PER", "O", "B-LOC"}}, 2, 2, 2},
      {{{"B-PER", "I-PER", "O", "B-PER"}, {"O", "B-LOC", "O"}},
       {{"B-PER", "I-PER", "O", "B-LOC"}, {"O", "B-LOC", "I-LOC"}},
       1, 3, 3},
      {{{"B-LOC", "I-LOC", "I-LOC", "O", "B-PER"}}, {{"B-LOC", "I-LOC", "O", "O", "B-PER"}}, 1, 2, 2},
      {{{"O", "O", "O"}}, {{"B-PER", "O", "B-LOC"}}, 0, 0, 2},
      {{{"B-PER", "B-PER", "I-LOC"}}, {{"B-PER", "I-PER", "B-LOC"}}, 1, 3, 2},
      {{{"B-PER", "O", "B-LOC", "I-LOC"}, {"B-PER"}, {"O"}},
       {{"B-PER", "O", "B-LOC", "O"}, {"B-PER"}, {"B-LOC"}},
       2, 3, 4},
  };
  for (std::size_t i = 0; i < f1_cases.size(); ++i) {
    const auto& c = f1_cases[i];
    std::vector<std::vector<SpanLabel>> p, g;
    for (const auto& t : c.pred) p.push_back(bio_to_spans(t));
    for (const auto& t : c.gold) g.push_back(bio_to_spans(t));
    const double prec = c.n_pred ? double(c.tp) / double(c.n_pred) : 0.0;
    const double rec = c.n_gold ? double(c.tp) / double(c.n_gold) : 0.0;
    const double want = prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    expect(fmt("entity_f1 case %zu", i), entity_f1(p, g), want);
  }
  // Token accuracy against a confusion-matrix count, with ignored positions.
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(200), classes = 2 + rng.below(6);
    std::vector<int> pred(n), gold(n);
    std::vector<std::vector<std::size_t>> cm(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = int(rng.below(classes));
      gold[i] = rng.uniform() < 0.1 ? kIgnoreIndex : int(rng.below(classes));
      if (gold[i] != kIgnoreIndex) cm[std::size_t(gold[i])][std::size_t(pred[i])]++;
    }
    std::size_t diag = 0, total = 0;
    for (std::size_t a = 0; a < classes; ++a) {
      for (std::size_t b = 0; b < classes; ++b) total += cm[a][b];
      diag += cm[a][a];
    }
    expect(fmt("token_accuracy trial %d", trial), token_accuracy(pred, gold, kIgnoreIndex),
           total ? double(diag) / double(total) : 0.0);
  }
  return {7, "metric correctness", mismatches == 0,
          fmt("%zu entity-F1 fixtures vs hand counts and 50 token-accuracy draws vs confusion matrix: %zu inexact%s",
              f1_cases.size(), mismatches, first.empty() ? "" : ("; first: " + first).c_str())};
}

RunConfig determinism_config(const fs::path& out) {
  RunConfig cfg;
  cfg.seed = 11;
  cfg.task = "tagging";
  cfg.train_size = 200;
  cfg.val_size = 60;
  cfg.vocab_words = 60;
  cfg.max_len = 32;
  cfg.encoder.hidden_dim = 16;
  cfg.encoder.max_seq_len = 32;
  cfg.pretrain_tokens = 3000;
  cfg.pretrain_epochs = 2;
  cfg.plan.max_epochs_phase1 = 3;
  cfg.plan.max_epochs_phase2 = 3;
  cfg.out = out.string();
  return cfg;
}

Verdict determinism(const fs::path& work) {
  setenv("STACKTUNE_THREADS", "1", 1);
  std::ostringstream sink;
  const auto a = work / "determinism" / "a";
  const auto b = work / "determinism" / "b";
  fs::remove_all(work / "determinism");
  cmd_adapt(determinism_config(a), sink);
  cmd_adapt(determinism_config(b), sink);
  std::vector<std::string> differ;
  std::size_t bytes = 0;
  for (const char* f : {"metrics.jsonl", "model.stkt", "encoder.stkt", "pretrain_metrics.jsonl"}) {
    const auto x = slurp(a / f), y = slurp(b / f);
    bytes += x.size();
    if (x.empty() || x != y) differ.push_back(f);
  }
  std::string detail = fmt("two cmd_adapt runs with STACKTUNE_THREADS=1: metric logs and checkpoints "
                           "byte-identical (%zu bytes compared)",
                           bytes);
  for (const auto& d : differ) detail += "; differs: " + d;
  return {8, "determinism", differ.empty(), detail};
}

Verdict switch_phase_table() {
  struct Row {
    std::vector<std::pair<double, double>> epochs;  // (train acc, val acc)
    double gamma;
    int patience;
    bool want;
    const char* what;
  };
  const std::vector<Row> rows{
      {{{0.90, 0.80}}, 0.05, 3, true, "gap only"},
      {{{0.80, 0.80}, {0.81, 0.78}, {0.81, 0.79}}, 0.05, 2, true, "plateau only"},
      {{{0.80, 0.80}, {0.95, 0.78}, {0.97, 0.79}}, 0.05, 2, true, "gap and plateau"},
      {{{0.70, 0.70}, {0.75, 0.74}, {0.78, 0.77}}, 0.05, 2, false, "neither"},
      {{{0.75, 0.50}}, 0.25, 2, false, "gap equal to gamma"},
      {{{0.80, 0.80}, {0.80, 0.80}}, 0.05, 2, false, "history not longer than patience"},
      {{{0.80, 0.80}, {0.80, 0.80}, {0.80, 0.80}}, 0.05, 2, true, "flat val is a plateau"},
      {{{0.80, 0.80}, {0.80, 0.70}, {0.81, 0.81}}, 0.05, 2, false, "improvement at the last epoch"},
      {{{0.60, 0.60}, {0.65, 0.65}, {0.68, 0.66}, {0.68, 0.64}}, 0.05, 3, false, "best within patience window"},
      {{{0.60, 0.60}, {0.65, 0.65}, {0.68, 0.66}, {0.68, 0.64}}, 0.05, 1, true, "patience 1 plateau"},
  };
  std::size_t right = 0;
  std::string wrong;
  for (const auto& row : rows) {
    std::vector<MetricRecord> h;
    int e = 0;
    for (const auto& [tr, va] : row.epochs) {
      ++e;
      h.push_back({e, 1, Split::Train, 0.0, tr});
      h.push_back({e, 1, Split::Val, 0.0, va});
    }
    if (switch_phase(h, row.gamma, row.patience) == row.want) {
      ++right;
    } else {
      wrong += std::string("; wrong: ") + row.what;
    }
  }
  return {9, "switch_phase truth table", right == rows.size(),
          fmt("%zu/%zu rows exact", right, rows.size()) + wrong};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  fs::create_directories(work);
  const bool fast_only = std::getenv("STACKTUNE_ACCEPTANCE_FAST") != nullptr;

  std::vector<Verdict> verdicts;
  auto record = [&](Verdict v) {
    std::cerr << "  .. criterion " << v.id << " done: " << (v.passed ? "PASS" : "FAIL") << std::endl;
    verdicts.push_back(std::move(v));
  };
  auto guarded = [&](int id, const std::string& name, const std::function<Verdict()>& f) {
    try {
      record(f());
    } catch (const std::exception& e) {
      record({id, name, false, std::string("threw: ") + e.what()});
    }
  };

  guarded(9, "switch_phase truth table", switch_phase_table);
  guarded(7, "metric correctness", metric_fixtures);
  guarded(6, "ensemble", ensemble_fixture);
  guarded(8, "determinism", [&] { return determinism(work); });
  if (!fast_only) {
    FreezeLog freeze;
    guarded(1, "gradient suite", gradient_suite);
    guarded(3, "pretraining", pretraining);
    guarded(4, "experiment A (tagging)", [&] { return experiment_a(work, freeze); });
    guarded(5, "experiment C (pair, sim-transformer)", [&] { return experiment_c(work, freeze); });
    record(freeze_verdict(freeze));
  }

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  std::ostringstream report;
  int failed = 0;
  for (const auto& v : verdicts) {
    report << (v.passed ? "[PASS] " : "[FAIL] ") << v.id << " " << v.name << ": " << v.detail << "\n";
    failed += !v.passed;
  }
  report << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << "\n";
  std::cout << report.str();
  std::ofstream(work / "acceptance_report.txt") << report.str();
  return failed ? 1 : 0;
}
