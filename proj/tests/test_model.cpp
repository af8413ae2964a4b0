#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "htad/error.hpp"
#include "htad/model.hpp"
#include "support.hpp"

using namespace htad;
using namespace htad::testing;

namespace {

struct Fixture {
  ModelConfig config;
  ParameterStore store;
  std::optional<HtadModel> model;

  explicit Fixture(AttentionMode mode, std::size_t F = 4, std::size_t Fp = 4, std::size_t channels = 0,
                   std::size_t rows = 8) {
    config.embedding_dim = F;
    config.attention_dim = Fp;
    config.attention_mode = mode;
    config.context_types = {"lab", "symptom"};
    config.group_count = 2;
    config.series_channels = channels;
    config.series_hidden = 3;
    std::vector<Target> targets = {{"d0", rows - 3, 0}, {"d1", rows - 2, 0}, {"d2", rows - 1, 1}};
    Rng rng(5);
    model = HtadModel::create(config, targets, rows, store, rng);
    randomize(store, rng);
  }
  Tensor& p(const char* name) { return store.at(name).value; }
};

std::vector<double> values(const GradContext& ctx, Var v) {
  const auto s = ctx.value(v);
  return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("identity context transform returns the embedding") {
  Fixture fx(AttentionMode::group);
  auto& w = fx.p("W_c/lab");
  w.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) w(i, i) = 1.0;
  fx.p("b_c/lab").fill(0.0);
  GradContext ctx(fx.store);
  const Var h = ctx.constant({0.1, -0.2, 0.3, 0.4});
  CHECK(values(ctx, fx.model->transform_context(ctx, 0, h)) == std::vector<double>{0.1, -0.2, 0.3, 0.4});
  const Var zero = ctx.constant({0, 0, 0, 0});
  const auto b = fx.p("b_c/symptom").data();
  CHECK(values(ctx, fx.model->transform_context(ctx, 1, zero)) == std::vector<double>(b.begin(), b.end()));
  CHECK_THROWS(fx.model->transform_context(ctx, 7, h));
}

TEST_CASE("context transform matches a matmul oracle") {
  Fixture fx(AttentionMode::group, 6, 3);
  GradContext ctx(fx.store);
  const Vec h = {0.5, -1, 0.25, 2, -0.75, 0.1};
  const auto got = values(ctx, fx.model->transform_context(ctx, 1, ctx.constant(h)));
  const auto want = mat_vec(fx.p("W_c/symptom"), fx.p("b_c/symptom"), h);
  for (std::size_t i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
}

TEST_CASE("group mode shares attention vectors within a group") {
  Fixture fx(AttentionMode::group);
  GradContext ctx(fx.store);
  CHECK(values(ctx, fx.model->attention_vector_node(ctx, 0)) == values(ctx, fx.model->attention_vector_node(ctx, 1)));
  CHECK(values(ctx, fx.model->attention_vector_type(ctx, 0)) == values(ctx, fx.model->attention_vector_type(ctx, 1)));
  CHECK(values(ctx, fx.model->attention_vector_node(ctx, 0)) != values(ctx, fx.model->attention_vector_node(ctx, 2)));
  const auto q_row = fx.p("Q").row(1);
  CHECK(values(ctx, fx.model->attention_vector_node(ctx, 2)) == std::vector<double>(q_row.begin(), q_row.end()));
}

TEST_CASE("transform mode attention vectors") {
  Fixture fx(AttentionMode::transform);
  {
    GradContext ctx(fx.store);
    const auto M = fx.p("M");
    for (std::size_t d = 0; d < 3; ++d) {
      const Vec hd = row_of(M, fx.model->targets()[d].embedding_row);
      const auto q = values(ctx, fx.model->attention_vector_node(ctx, d));
      const auto want = mat_vec(fx.p("W_q"), fx.p("b_q"), hd);
      for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i] == doctest::Approx(want[i]).epsilon(1e-14));
    }
  }
  fx.p("W_q").fill(0.0);
  fx.p("W_s").fill(0.0);
  GradContext ctx(fx.store);
  const auto bq = fx.p("b_q").data();
  const auto bs = fx.p("b_s").data();
  for (std::size_t d = 0; d < 3; ++d) {
    CHECK(values(ctx, fx.model->attention_vector_node(ctx, d)) == std::vector<double>(bq.begin(), bq.end()));
    CHECK(values(ctx, fx.model->attention_vector_type(ctx, d)) == std::vector<double>(bs.begin(), bs.end()));
  }
}

TEST_CASE("node-level aggregation base cases") {
  Fixture fx(AttentionMode::group);
  GradContext ctx(fx.store);
  const Var q = fx.model->attention_vector_node(ctx, 0);
  const Var h = ctx.constant({0.3, -0.4, 0.5, 0.1});
  const std::vector<Var> one = {h};
  const auto single = fx.model->node_level_aggregate(ctx, 0, one, q);
  CHECK(single.alpha == std::vector<double>{1.0});
  const auto z = values(ctx, single.z);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx(std::tanh(ctx.value(h)[i])).epsilon(1e-15));
  const std::vector<Var> two = {h, ctx.constant({0.3, -0.4, 0.5, 0.1})};
  const auto pair = fx.model->node_level_aggregate(ctx, 0, two, q);
  CHECK(pair.alpha[0] == doctest::Approx(0.5));
  CHECK(pair.alpha[1] == doctest::Approx(0.5));
  CHECK_THROWS(fx.model->node_level_aggregate(ctx, 0, std::vector<Var>{}, q));
}

TEST_CASE("equal transformed neighbours give uniform attention for any query") {
  Fixture fx(AttentionMode::group);
  GradContext ctx(fx.store);
  const std::vector<Var> same(5, ctx.constant({1.0, 2.0, -1.0, 0.5}));
  for (const Vec& qv : {Vec{10, -3, 2, 7}, Vec{-100, 0, 0, 1}}) {
    const auto rep = fx.model->node_level_aggregate(ctx, 1, same, ctx.constant(qv));
    for (double a : rep.alpha) CHECK(a == doctest::Approx(0.2).epsilon(1e-14));
  }
}

TEST_CASE("type-level aggregation base cases") {
  Fixture fx(AttentionMode::group);
  GradContext ctx(fx.store);
  const Var s = fx.model->attention_vector_type(ctx, 0);
  TypeRepresentation a{"lab", ctx.constant({0.2, 0.1, -0.3, 0.4}), {1.0}};
  const auto one = fx.model->type_level_aggregate(ctx, std::vector<TypeRepresentation>{a}, s);
  CHECK(one.beta == std::vector<double>{1.0});
  const auto f = values(ctx, one.f);
  for (std::size_t i = 0; i < 4; ++i) CHECK(f[i] == doctest::Approx(std::tanh(ctx.value(a.z)[i])).epsilon(1e-15));
  const auto two = fx.model->type_level_aggregate(ctx, std::vector<TypeRepresentation>{a, a}, s);
  CHECK(two.beta[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(fx.model->type_level_aggregate(ctx, std::vector<TypeRepresentation>{}, s), DataError);
}

TEST_CASE("time series encoder") {
  SUBCASE("zero weights give zero output") {
    Fixture fx(AttentionMode::group, 4, 4, 2);
    for (const char* n : {"lstm/W", "lstm/b", "W_t", "b_t"}) fx.p(n).fill(0.0);
    GradContext ctx(fx.store);
    const Series s{3, 2, {1, 2, 3, 4, 5, 6}};
    for (double v : values(ctx, fx.model->encode_time_series(ctx, s).z)) CHECK(v == 0.0);
  }
  SUBCASE("single step matches a hand-rolled cell") {
    Fixture fx(AttentionMode::group, 4, 4, 2);
    GradContext ctx(fx.store);
    const Series s{1, 2, {0.7, -1.3}};
    const auto rep = fx.model->encode_time_series(ctx, s);
    CHECK(rep.alpha.empty());
    const std::size_t H = 3;
    const Tensor& W = fx.p("lstm/W");
    const Tensor& b = fx.p("lstm/b");
    Vec h(H);
    for (std::size_t k = 0; k < H; ++k) {
      auto gate = [&](std::size_t g) { return W(g * H + k, 0) * 0.7 + W(g * H + k, 1) * -1.3 + b.data()[g * H + k]; };
      const double c = logistic(gate(0)) * std::tanh(gate(2));  // previous cell state is zero
      h[k] = logistic(gate(3)) * std::tanh(c);
    }
    const auto want = mat_vec(fx.p("W_t"), fx.p("b_t"), h);
    const auto got = values(ctx, rep.z);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
  SUBCASE("errors") {
    Fixture fx(AttentionMode::group, 4, 4, 2);
    GradContext ctx(fx.store);
    CHECK_THROWS_AS(fx.model->encode_time_series(ctx, Series{0, 2, {}}), DataError);
    CHECK_THROWS_AS(fx.model->encode_time_series(ctx, Series{1, 3, {1, 2, 3}}), DataError);
  }
  SUBCASE("gradients through three steps") {
    Fixture fx(AttentionMode::group, 4, 4, 2);
    const Series s{3, 2, {0.5, -0.2, 0.1, 0.9, -0.7, 0.3}};
    const auto r = grad_check([&](GradContext& ctx) { return ctx.squared_norm(fx.model->encode_time_series(ctx, s).z); },
                              fx.store, 1e-5, {"lstm/W", "lstm/b", "W_t", "b_t"});
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("forward pass matches the straight-line oracle") {
  Rng rng(21);
  for (AttentionMode mode : {AttentionMode::group, AttentionMode::transform, AttentionMode::mean}) {
    for (int trial = 0; trial < 30; ++trial) {
      Instance inst = random_instance(rng, mode);
      for (std::size_t t = 0; t < inst.targets.size(); ++t) {
        GradContext ctx(inst.store);
        const auto enc = inst.model->encode_context(ctx, inst.input);
        const auto rep = inst.model->represent(ctx, enc, t);
        const double score = ctx.scalar(inst.model->ranking_score(ctx, rep.f, t));
        const auto want = oracle_forward(inst.store, inst.config, inst.targets[t], inst.input);
        const auto f = values(ctx, rep.f);
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f[i] - want.f[i]) < 1e-10);
        CHECK(std::abs(score - want.score) < 1e-10);
        REQUIRE(rep.beta.size() == want.beta.size());
        for (std::size_t i = 0; i < rep.beta.size(); ++i) CHECK(std::abs(rep.beta[i] - want.beta[i]) < 1e-10);
        for (std::size_t k = 0; k < want.alpha.size(); ++k) {
          for (std::size_t i = 0; i < want.alpha[k].size(); ++i) CHECK(std::abs(rep.types[k].alpha[i] - want.alpha[k][i]) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("mean mode gives uniform weights") {
  Rng rng(22);
  Instance inst = random_instance(rng, AttentionMode::mean);
  GradContext ctx(inst.store);
  const auto enc = inst.model->encode_context(ctx, inst.input);
  const auto rep = inst.model->represent(ctx, enc, 0);
  for (const auto& t : rep.types) {
    for (double a : t.alpha) CHECK(a == doctest::Approx(1.0 / static_cast<double>(t.alpha.size())));
  }
  for (double b : rep.beta) CHECK(b == doctest::Approx(1.0 / static_cast<double>(rep.beta.size())));
}

TEST_CASE("shuffling neighbours permutes alpha and keeps z") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    Instance inst = random_instance(rng, AttentionMode::transform);
    ContextInput shuffled = inst.input;
    std::vector<std::vector<std::size_t>> perms;
    for (auto& tn : shuffled.types) {
      std::vector<std::size_t> perm(tn.rows.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      TypeNeighbors copy = tn;
      for (std::size_t i = 0; i < perm.size(); ++i) {
        tn.rows[i] = copy.rows[perm[i]];
        tn.labels[i] = copy.labels[perm[i]];
      }
      perms.push_back(perm);
    }
    GradContext ctx(inst.store);
    const auto a = inst.model->represent(ctx, inst.model->encode_context(ctx, inst.input), 0);
    const auto b = inst.model->represent(ctx, inst.model->encode_context(ctx, shuffled), 0);
    for (std::size_t k = 0; k < perms.size(); ++k) {
      for (std::size_t i = 0; i < perms[k].size(); ++i) CHECK(std::abs(b.types[k].alpha[i] - a.types[k].alpha[perms[k][i]]) < 1e-12);
      const auto za = values(ctx, a.types[k].z), zb = values(ctx, b.types[k].z);
      for (std::size_t i = 0; i < za.size(); ++i) CHECK(std::abs(za[i] - zb[i]) < 1e-12);
    }
  }
}

TEST_CASE("different groups can attend differently to the same patient") {
  Fixture fx(AttentionMode::group);
  auto& Q = fx.p("Q");
  for (std::size_t i = 0; i < 4; ++i) {
    Q(0, i) = 3.0;
    Q(1, i) = -3.0;
  }
  ContextInput in;
  in.patient = "p";
  in.types.push_back(TypeNeighbors{0, {0, 1, 2}, {"a", "b", "c"}});
  GradContext ctx(fx.store);
  const auto enc = fx.model->encode_context(ctx, in);
  const auto a0 = fx.model->represent(ctx, enc, 0).types[0].alpha;
  const auto a2 = fx.model->represent(ctx, enc, 2).types[0].alpha;
  CHECK(a0 != a2);
}

TEST_CASE("patient representation from a graph") {
  const std::vector<ClinicalRecord> r = {{"p1", "a", "lab", "1"}, {"p2", "s", "symptom", std::nullopt}};
  const std::vector<std::string> pats = {"p1", "p2", "p3"};
  const std::vector<std::string> types = {"lab", "symptom"};
  const auto g = build_graph(r, pats, {}, types);
  EmbeddingIndex index;
  for (const auto& n : g.nodes()) {
    if (n.type != g.patient_type()) index.add(node_key(g.type_name(n.type), n.item, n.value));
  }
  index.add("diagnosis|d|");
  ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.attention_dim = 4;
  cfg.context_types = types;
  cfg.group_count = 1;
  ParameterStore store;
  Rng rng(6);
  const auto model = HtadModel::create(cfg, {{"d", 2, 0}}, index.size(), store, rng);
  GradContext ctx(store);
  const auto [rep, trace] = patient_representation(ctx, model, g, index, *g.find_patient("p1"), 0, nullptr);
  CHECK(rep.beta == std::vector<double>{1.0});
  CHECK(trace.alpha.at("lab").size() == 1);
  CHECK(trace.alpha.at("lab").begin()->second == 1.0);
  CHECK(trace.beta.at("lab") == 1.0);
  // f = tanh(tanh(h'))
  const Vec h = mat_vec(store.at("W_c/lab").value, store.at("b_c/lab").value, row_of(store.at("M").value, 0));
  const auto f = values(ctx, rep.f);
  for (std::size_t i = 0; i < 4; ++i) CHECK(f[i] == doctest::Approx(std::tanh(std::tanh(h[i]))).epsilon(1e-14));
  CHECK_THROWS_AS(patient_representation(ctx, model, g, index, *g.find_patient("p3"), 0, nullptr), DataError);
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.context_types = {"lab"};
  c.group_count = 1;
  CHECK_NOTHROW(c.validate());
  c.embedding_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_attention_mode("fancy"), ConfigError);
}
