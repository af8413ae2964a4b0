// Acceptance suite: one PASS/FAIL line per criterion. `--only N` runs a
// single criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "htad/cli.hpp"
#include "htad/pipeline.hpp"
#include "support.hpp"

using namespace htad;
using namespace htad::testing;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------------ 1

Outcome oracle_equivalence() {
  const auto start = Clock::now();
  Rng rng(101);
  double worst = 0;
  std::size_t checked = 0;
  const AttentionMode modes[] = {AttentionMode::group, AttentionMode::transform, AttentionMode::mean};
  for (int i = 0; i < 100; ++i) {
    Instance inst = random_instance(rng, modes[i % 3]);
    for (std::size_t t = 0; t < inst.targets.size(); ++t) {
      GradContext ctx(inst.store);
      const auto rep = inst.model->represent(ctx, inst.model->encode_context(ctx, inst.input), t);
      const double score = ctx.scalar(inst.model->ranking_score(ctx, rep.f, t));
      const auto want = oracle_forward(inst.store, inst.config, inst.targets[t], inst.input);
      const auto f = ctx.value(rep.f);
      for (std::size_t k = 0; k < f.size(); ++k) worst = std::max(worst, std::abs(f[k] - want.f[k]));
      worst = std::max(worst, std::abs(score - want.score));
      ++checked;
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-10 && secs < 10,
          fmt("100 instances, %zu (patient, target) pairs, max abs error %.3g, %.2f s", checked, worst, secs)};
}

// ------------------------------------------------------------------ 2

Outcome gradient_correctness() {
  const auto start = Clock::now();
  Rng rng(202);
  InstanceShape shape;
  shape.max_types = 3;
  shape.max_nodes = 4;
  double worst_cls = 0, worst_hinge = 0, worst_ns = 0;
  for (int trial = 0; trial < 10; ++trial) {
    // Classification through the full model and the head.
    {
      Instance inst = random_instance(rng, AttentionMode::group, shape);
      const auto head = ClassificationHead::create(inst.store, inst.config.attention_dim, 4, inst.targets.size(), rng);
      randomize(inst.store, rng);
      std::vector<double> labels;
      for (std::size_t t = 0; t < inst.targets.size(); ++t) labels.push_back(static_cast<double>(t % 2));
      const auto r = grad_check(
          [&](GradContext& ctx) {
            const auto enc = inst.model->encode_context(ctx, inst.input);
            std::vector<Var> reps;
            for (std::size_t t = 0; t < inst.targets.size(); ++t) reps.push_back(inst.model->represent(ctx, enc, t).f);
            return classification_loss(ctx, classification_forward(ctx, reps, head), labels);
          },
          inst.store, 1e-3);
      worst_cls = std::max(worst_cls, r.max_rel_error);
    }
    // Hinge between two targets, margin large enough to stay off the kink.
    {
      Instance inst = random_instance(rng, AttentionMode::transform, shape);
      while (inst.targets.size() < 2) inst = random_instance(rng, AttentionMode::transform, shape);
      const auto r = grad_check(
          [&](GradContext& ctx) {
            const auto enc = inst.model->encode_context(ctx, inst.input);
            const Var pos = inst.model->ranking_score(ctx, inst.model->represent(ctx, enc, 0).f, 0);
            const Var neg = inst.model->ranking_score(ctx, inst.model->represent(ctx, enc, 1).f, 1);
            return hinge_loss(ctx, pos, neg, 10.0);
          },
          inst.store, 1e-3);
      worst_hinge = std::max(worst_hinge, r.max_rel_error);
    }
    // Negative sampling over the model's embedding matrix plus relation bias.
    {
      Instance inst = random_instance(rng, AttentionMode::group, shape);
      const ParamId br = inst.store.add("b_r", {3, 1}, true);
      randomize(inst.store, rng);
      const std::size_t rows = inst.store.at("M").value.shape()[0];
      std::uniform_int_distribution<std::size_t> row(0, rows - 1);
      std::vector<std::size_t> negs(5);
      for (auto& n : negs) n = row(rng);
      const std::size_t i = row(rng), j = row(rng);
      const auto r = grad_check(
          [&](GradContext& ctx) { return unsup_ns_loss(ctx, inst.model->embeddings(), br, 1, i, j, negs); },
          inst.store, 1e-3, {"M", "b_r"});
      worst_ns = std::max(worst_ns, r.max_rel_error);
    }
  }
  const double secs = seconds_since(start);
  const double worst = std::max({worst_cls, worst_hinge, worst_ns});
  return {worst < 1e-4 && secs < 60,
          fmt("max rel error classification %.2g, hinge %.2g, negative sampling %.2g (h = 1e-3), %.2f s", worst_cls,
              worst_hinge, worst_ns, secs)};
}

// ------------------------------------------------------------------ 3

Outcome attention_invariants() {
  Rng rng(303);
  double worst_sum = 0, worst_perm = 0;
  const AttentionMode modes[] = {AttentionMode::group, AttentionMode::transform, AttentionMode::mean};
  for (int pass = 0; pass < 1000; ++pass) {
    Instance inst = random_instance(rng, modes[pass % 3]);
    ContextInput shuffled = inst.input;
    std::vector<std::vector<std::size_t>> perms;
    for (auto& tn : shuffled.types) {
      std::vector<std::size_t> perm(tn.rows.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const auto rows = tn.rows;
      for (std::size_t i = 0; i < perm.size(); ++i) tn.rows[i] = rows[perm[i]];
      perms.push_back(perm);
    }
    const std::size_t t = pass % inst.targets.size();
    GradContext ctx(inst.store);
    const auto a = inst.model->represent(ctx, inst.model->encode_context(ctx, inst.input), t);
    const auto b = inst.model->represent(ctx, inst.model->encode_context(ctx, shuffled), t);
    auto sum = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
    worst_sum = std::max(worst_sum, std::abs(sum(a.beta) - 1));
    for (std::size_t k = 0; k < perms.size(); ++k) {
      worst_sum = std::max(worst_sum, std::abs(sum(a.types[k].alpha) - 1));
      for (std::size_t i = 0; i < perms[k].size(); ++i) {
        worst_perm = std::max(worst_perm, std::abs(b.types[k].alpha[i] - a.types[k].alpha[perms[k][i]]));
      }
    }
    for (std::size_t k = 0; k < a.beta.size(); ++k) worst_perm = std::max(worst_perm, std::abs(a.beta[k] - b.beta[k]));
  }
  return {worst_sum <= 1e-9 && worst_perm <= 1e-9,
          fmt("1000 passes, max |sum - 1| %.2g, max permutation deviation %.2g", worst_sum, worst_perm)};
}

// ------------------------------------------------------------ training

struct Split {
  Dataset train, test;
  DiagnosisVocab vocab;
  std::map<std::string, std::vector<std::string>> indicative;
};

Split make_split(const SyntheticSpec& spec) {
  const auto d = generate_synthetic(spec);
  const auto types = record_types(d.records);
  Split s;
  s.vocab = d.vocab;
  s.indicative = d.indicative_items;
  s.train = make_dataset(d.records, d.train_targets, d.series, d.series_channels, types);
  s.test = make_dataset(d.records, d.test_targets, d.series, d.series_channels, types);
  return s;
}

SyntheticSpec planted_spec() {
  SyntheticSpec spec;
  spec.patients = 1200;
  spec.test_patients = 200;
  spec.diagnoses = 10;
  spec.groups = 4;
  spec.p_signal = 0.9;
  return spec;
}

// Settings shared by every trained criterion: a small model trained jointly
// and ten-item candidate lists (the synthetic vocabulary has ten diagnoses).
RunConfig experiment_config(Task task, AttentionMode mode, std::uint64_t seed) {
  RunConfig c;
  c.embedding_dim = 64;
  c.attention_dim = 32;
  c.series_hidden = 8;
  c.attention_mode = mode;
  c.candidates = 10;
  auto& t = c.training;
  t.task = task;
  t.mode = TrainingMode::joint;
  t.lr = 0.01;
  t.batch_size = 32;
  t.epochs = 20;
  t.pretrain_epochs = 2;
  t.seed = seed;
  return c;
}

ModelBundle train(const Split& s, const RunConfig& cfg) {
  ModelBundle b = ModelBundle::create(cfg, s.train, s.vocab, {});
  Trainer(b, s.train).run();
  return b;
}

double metric(const ModelBundle& b, const Split& s) {
  const auto r = evaluate(b, s.test).report;
  return b.task() == Task::rank ? r["map"]["4"].get<double>() : r["auc"]["micro"].get<double>();
}

// ------------------------------------------------------------------ 4

Outcome planted_signal() {
  const auto start = Clock::now();
  const Split s = make_split(planted_spec());
  const ModelBundle b = train(s, experiment_config(Task::rank, AttentionMode::transform, 1));
  const auto traces = collect_traces(b, s.test);
  std::size_t eligible = 0, hits = 0;
  double ent_single = 0, ent_multi = 0;
  std::size_t n_single = 0, n_multi = 0;
  for (const auto& t : traces) {
    const auto& indicative = s.indicative.at(t.diagnosis);
    std::set<std::string> keys;
    for (const auto& item : indicative) keys.insert(node_key("lab", item, std::string(kPositiveValue)));
    const auto it = t.alpha.find("lab");
    if (it == t.alpha.end()) continue;
    const auto& lab = it->second;
    bool present = false;
    std::string best;
    double best_w = -1;
    std::vector<double> w;
    for (const auto& [node, a] : lab) {
      present = present || keys.contains(node);
      if (a > best_w) {
        best_w = a;
        best = node;
      }
      w.push_back(a);
    }
    const double h = attention_entropy(w);
    if (indicative.size() == 1) {
      ent_single += h;
      ++n_single;
    } else {
      ent_multi += h;
      ++n_multi;
    }
    if (!present) continue;
    ++eligible;
    hits += keys.contains(best);
  }
  const double rate = eligible ? static_cast<double>(hits) / static_cast<double>(eligible) : 0.0;
  ent_single /= static_cast<double>(std::max<std::size_t>(n_single, 1));
  ent_multi /= static_cast<double>(std::max<std::size_t>(n_multi, 1));
  const double secs = seconds_since(start);
  return {rate >= 0.9 && ent_single < ent_multi && secs < 300,
          fmt("indicative item has max lab alpha in %.1f%% of %zu (patient, diagnosis) pairs; mean entropy "
              "single-indicator %.3f < multi-indicator %.3f; %.1f s",
              100 * rate, eligible, ent_single, ent_multi, secs)};
}

// ------------------------------------------------------------------ 5

Outcome directional() {
  const auto start = Clock::now();
  const Split s = make_split(planted_spec());
  const std::uint64_t seeds[] = {1, 2, 3};
  std::map<AttentionMode, std::pair<double, double>> avg;  // (micro AUC, MAP@4)
  for (AttentionMode mode : {AttentionMode::group, AttentionMode::transform, AttentionMode::mean}) {
    double auc = 0, map4 = 0;
    for (auto seed : seeds) {
      auc += metric(train(s, experiment_config(Task::phenotype, mode, seed)), s);
      map4 += metric(train(s, experiment_config(Task::rank, mode, seed)), s);
    }
    avg[mode] = {auc / std::size(seeds), map4 / std::size(seeds)};
  }
  const auto& g = avg[AttentionMode::group];
  const auto& t = avg[AttentionMode::transform];
  const auto& m = avg[AttentionMode::mean];
  const bool ok = g.first >= t.first && t.first >= m.first && g.second >= t.second && t.second >= m.second &&
                  g.first - m.first >= 0.02 && g.second - m.second >= 0.02;
  const double secs = seconds_since(start);
  return {ok && secs < 900,
          fmt("micro AUC group %.4f / transform %.4f / mean %.4f; MAP@4 group %.4f / transform %.4f / mean %.4f "
              "(mean of 3 seeds); %.0f s",
              g.first, t.first, m.first, g.second, t.second, m.second, secs)};
}

// ------------------------------------------------------------------ 6

Outcome noiseless() {
  SyntheticSpec spec = planted_spec();
  spec.p_signal = 1.0;
  spec.background_rate = 0.0;
  const Split s = make_split(spec);
  const double map4 = metric(train(s, experiment_config(Task::rank, AttentionMode::group, 1)), s);
  const double auc = metric(train(s, experiment_config(Task::phenotype, AttentionMode::group, 1)), s);
  return {map4 >= 0.95 && auc >= 0.98, fmt("MAP@4 %.4f (>= 0.95), micro AUC %.4f (>= 0.98)", map4, auc)};
}

// ------------------------------------------------------------------ 7

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "htad");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

Outcome determinism() {
  const auto dir = std::filesystem::temp_directory_path() / "htad_acceptance_determinism";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string d = dir.string();
  std::ofstream(dir / "syn.json") << R"({"patients":300,"test_patients":60})";
  std::ofstream(dir / "cfg.json") << R"({"F":16,"F_prime":8,"series_hidden":4,"epochs":3,"pretrain_epochs":1,)"
                                     R"("batch_size":16,"lr":0.01,"candidates":10})";
  bool ok = cli({"generate", "--config", d + "/syn.json", "--out", d + "/data"}) == 0;
  std::size_t compared = 0;
  bool same = true;
  for (const char* task : {"rank", "phenotype"}) {
    for (const char* run : {"a", "b"}) {
      const std::string ck = d + "/" + task + "_" + run + ".ckpt";
      ok = ok && cli({"train", "--config", d + "/cfg.json", "--records", d + "/data/records.jsonl", "--series",
                      d + "/data/series", "--targets", d + "/data/train_targets.jsonl", "--grouping",
                      d + "/data/grouping.jsonl", "--task", task, "--seed", "42", "--out", ck}) == 0;
      ok = ok && cli({"eval", "--checkpoint", ck, "--records", d + "/data/records.jsonl", "--series",
                      d + "/data/series", "--targets", d + "/data/test_targets.jsonl", "--seed", "42", "--out",
                      ck + ".report.json"}) == 0;
    }
    const std::string a = d + "/" + task + "_a.ckpt", b = d + "/" + task + "_b.ckpt";
    same = same && slurp(a) == slurp(b) && !slurp(a).empty();
    same = same && slurp(a + ".report.json") == slurp(b + ".report.json") && !slurp(a + ".report.json").empty();
    compared += 2;
  }
  std::filesystem::remove_all(dir);
  return {ok && same, fmt("%zu file pairs from two seeded train/eval runs per task are %s", compared,
                          same ? "byte-identical" : "DIFFERENT")};
}

// ------------------------------------------------------------------ 8

Outcome metric_truths() {
  const std::vector<std::vector<double>> sep = {{0.9, 0.8, 0.1}, {0.7, 0.2, 0.3}};
  const std::vector<std::vector<double>> tied = {{0.4, 0.4, 0.4}, {0.4, 0.4, 0.4}};
  const std::vector<std::vector<int>> lab = {{1, 1, 0}, {1, 0, 0}};
  bool ok = true;
  for (auto m : {AucMode::micro, AucMode::macro, AucMode::weighted}) {
    ok = ok && auc_roc(sep, lab, m) == 1.0 && auc_roc(tied, lab, m) == 0.5;
  }
  const std::vector<std::vector<bool>> a = {{true, true, false, false, false}};
  const std::vector<std::vector<bool>> b = {{false, true, false, false}};
  const std::vector<std::vector<bool>> c = {{false, false, false, false, true}};
  const double ma = map_at_k(a, 4), mb = map_at_k(b, 4), mc = map_at_k(c, 4);
  ok = ok && ma == 1.0 && mb == 0.5 && mc == 0.0;
  return {ok, fmt("AUC separated 1.0 / tied 0.5 in all modes; MAP@4 hand cases %.1f / %.1f / %.1f", ma, mb, mc)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0) only = std::atoi(argv[i + 1]);
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"oracle equivalence", oracle_equivalence},  {"gradient correctness", gradient_correctness},
      {"attention invariants", attention_invariants}, {"planted-signal recovery", planted_signal},
      {"directional replication", directional},    {"noiseless sanity bound", noiseless},
      {"determinism", determinism},                {"metric unit truths", metric_truths},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
