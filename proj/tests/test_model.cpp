#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "kgmd/errors.hpp"
#include "kgmd/gradcheck.hpp"
#include "kgmd/model.hpp"

using namespace kgmd;

namespace {

void fill_random(Tensor& t, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  for (double& x : t.values) x = n(rng);
}

Vec random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(n);
  for (double& x : v) x = g(rng);
  return v;
}

// Plain reference MLP: W2 relu(W1 x + b1) + b2 with nested loops.
Vec mlp_oracle(const Mlp& m, const Vec& x) {
  Vec hidden(m.w1.rows);
  for (std::size_t r = 0; r < m.w1.rows; ++r) {
    double s = m.b1.values[r];
    for (std::size_t c = 0; c < m.w1.cols; ++c) s += m.w1.values[r * m.w1.cols + c] * x[c];
    hidden[r] = std::max(0.0, s);
  }
  Vec out(m.w2.rows);
  for (std::size_t r = 0; r < m.w2.rows; ++r) {
    double s = m.b2.values[r];
    for (std::size_t c = 0; c < m.w2.cols; ++c) s += m.w2.values[r * m.w2.cols + c] * hidden[c];
    out[r] = s;
  }
  return out;
}

Mlp mlp_of(std::size_t in, std::size_t hidden, std::size_t out) {
  return {Tensor("w1", hidden, in), Tensor("b1", 1, hidden), Tensor("w2", out, hidden), Tensor("b2", 1, out)};
}

DatasetBundle tiny_bundle() { return grad_check_instance(4); }

}  // namespace

TEST_CASE("score is the inner product") {
  CHECK(score(Vec{1, 0, 2}, Vec{2, 3, 1}) == 4.0);
  CHECK(score(Vec{3.5, -2, 7}, Vec{0, 0, 0}) == 0.0);
  std::mt19937_64 rng(2);
  const Vec a = random_vec(64, rng), b = random_vec(64, rng);
  long double oracle = 0;
  for (std::size_t i = 0; i < 64; ++i) oracle += static_cast<long double>(a[i]) * b[i];
  CHECK(score(a, b) == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));
  CHECK_THROWS_AS(score(Vec{1, 2}, Vec{1, 2, 3}), std::invalid_argument);
}

TEST_CASE("margin losses") {
  CHECK(rec_loss(2.0, 1.0, 0.5) == 0.0);
  CHECK(rec_loss(1.0, 2.0, 0.5) == 1.5);
  CHECK(rec_loss(1.0, 1.0, 1.0) == 1.0);
  CHECK(kge_loss(0.2, 1.5, 1.0) == 0.0);
  CHECK(kge_loss(1.0, 0.5, 1.0) == 1.5);
  CHECK(kge_loss(0.0, 0.0, 0.0) == 0.0);
}

TEST_CASE("transe_distance") {
  ModelConfig c;
  c.dim = 2;
  c.kge = true;
  Parameters p = Parameters::init(c, {1, 1, 3, 1, 1}, 1);
  auto set = [](Tensor& t, std::size_t r, Vec v) { std::copy(v.begin(), v.end(), t.row(r).begin()); };

  set(p.entity, 0, {0, 0});
  set(p.relation, 0, {1, 1});
  set(p.entity, 1, {1, 1});
  CHECK(transe_distance(0, 0, 1, p) == 0.0);

  set(p.entity, 0, {1, 0});
  set(p.relation, 0, {0, 0});
  set(p.entity, 1, {0, 0});
  CHECK(transe_distance(0, 0, 1, p) == 1.0);

  set(p.entity, 0, {1, 2});
  set(p.relation, 0, {3, 4});
  CHECK(transe_distance(0, 0, 1, p) == doctest::Approx(std::sqrt(52.0)).epsilon(1e-15));
  CHECK(transe_distance(0, 0, 1, p) == doctest::Approx(7.2111).epsilon(1e-4));
  CHECK_THROWS_AS(transe_distance(0, 0, 3, p), std::out_of_range);
}

TEST_CASE("MInt block") {
  std::mt19937_64 rng(3);
  SUBCASE("zero weights return the bias split in half") {
    Mlp m = mlp_of(4, 4, 4);
    m.b2.values = {1, 2, 3, 4};
    const auto out = mint_forward(random_vec(2, rng), random_vec(2, rng), m);
    CHECK(out.item == Vec{1, 2});
    CHECK(out.entity == Vec{3, 4});
  }
  SUBCASE("shape contract at h=16") {
    Mlp m = mlp_of(32, 32, 32);
    fill_random(m.w1, rng);
    fill_random(m.w2, rng);
    const auto out = mint_forward(random_vec(16, rng), random_vec(16, rng), m);
    CHECK(out.item.size() == 16);
    CHECK(out.entity.size() == 16);
  }
  SUBCASE("hand-set h=2 weights match by-hand arithmetic") {
    Mlp m = mlp_of(4, 3, 4);
    m.w1.values = {1, 0, -1, 0,  //
                   0, 1, 0, 1,   //
                   -1, -1, 0, 0};
    m.b1.values = {0.5, 0, 0};
    m.w2.values = {1, 0, 0,  //
                   0, 1, 0,  //
                   1, 1, 0,  //
                   0, 0, 2};
    m.b2.values = {0, 0, 0.25, 0};
    // x = (1, 2 | 3, 4): pre = (1 - 3 + .5, 2 + 4, -3) = (-1.5, 6, -3); relu = (0, 6, 0)
    const auto out = mint_forward(Vec{1, 2}, Vec{3, 4}, m);
    CHECK(out.item == Vec{0, 6});
    CHECK(out.entity == Vec{6.25, 0});
  }
  SUBCASE("random instance agrees with the nested-loop oracle") {
    Mlp m = mlp_of(16, 16, 16);
    fill_random(m.w1, rng);
    fill_random(m.b1, rng);
    fill_random(m.w2, rng);
    fill_random(m.b2, rng);
    const Vec v = random_vec(8, rng), e = random_vec(8, rng);
    Vec x = v;
    x.insert(x.end(), e.begin(), e.end());
    const Vec expected = mlp_oracle(m, x);
    const auto out = mint_forward(v, e, m);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(out.item[i] == doctest::Approx(expected[i]).epsilon(1e-12));
      CHECK(out.entity[i] == doctest::Approx(expected[8 + i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("Cross&Compress block") {
  auto block = [](std::size_t h) {
    return CrossCompress{Tensor("w_vv", 1, h), Tensor("w_ev", 1, h), Tensor("w_ve", 1, h),
                         Tensor("w_ee", 1, h), Tensor("b_v", 1, h),  Tensor("b_e", 1, h)};
  };
  SUBCASE("worked example") {
    CrossCompress w = block(2);
    w.w_vv.values = {1, 0};
    w.w_ev.values = {0, 1};
    const auto out = cnc_forward(Vec{1, 2}, Vec{3, 4}, w);
    CHECK(out.item == Vec{9, 14});
  }
  SUBCASE("zero item vector leaves only the biases") {
    std::mt19937_64 rng(5);
    CrossCompress w = block(3);
    for (Tensor* t : {&w.w_vv, &w.w_ev, &w.w_ve, &w.w_ee, &w.b_v, &w.b_e}) fill_random(*t, rng);
    const auto out = cnc_forward(Vec{0, 0, 0}, random_vec(3, rng), w);
    CHECK(out.item == w.b_v.values);
    CHECK(out.entity == w.b_e.values);
  }
  SUBCASE("random h=8 instance agrees with an explicit cross-matrix oracle") {
    std::mt19937_64 rng(6);
    const std::size_t h = 8;
    CrossCompress w = block(h);
    for (Tensor* t : {&w.w_vv, &w.w_ev, &w.w_ve, &w.w_ee, &w.b_v, &w.b_e}) fill_random(*t, rng);
    const Vec v = random_vec(h, rng), e = random_vec(h, rng);
    std::vector<Vec> C(h, Vec(h));
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < h; ++j) C[i][j] = v[i] * e[j];
    }
    const auto out = cnc_forward(v, e, w);
    for (std::size_t i = 0; i < h; ++i) {
      double vi = w.b_v.values[i], ei = w.b_e.values[i];
      for (std::size_t j = 0; j < h; ++j) {
        vi += C[i][j] * w.w_vv.values[j] + C[j][i] * w.w_ev.values[j];
        ei += C[i][j] * w.w_ve.values[j] + C[j][i] * w.w_ee.values[j];
      }
      CHECK(out.item[i] == doctest::Approx(vi).epsilon(1e-12));
      CHECK(out.entity[i] == doctest::Approx(ei).epsilon(1e-12));
    }
  }
}

TEST_CASE("encode_item bypass and composition") {
  const DatasetBundle b = tiny_bundle();
  ModelConfig off = variant_config("base");
  ModelConfig on = variant_config("kge");
  on.dim = off.dim = 8;
  const Parameters p_on = Parameters::init(on, ModelShape::of(b), 9);
  Parameters p_off = Parameters::init(off, ModelShape::of(b), 9);
  p_off.item = p_on.item;

  Index unlinked = 0, linked = 0;
  while (b.links.entity(unlinked)) ++unlinked;
  while (!b.links.entity(linked)) ++linked;

  const auto row = p_on.item.row(unlinked);
  CHECK(encode_item(unlinked, off, p_off, b.links) == Vec(row.begin(), row.end()));
  CHECK(encode_item(unlinked, on, p_on, b.links) == Vec(row.begin(), row.end()));

  const auto expected = mint_forward(p_on.item.row(linked), p_on.entity.row(*b.links.entity(linked)), p_on.mint);
  CHECK(encode_item(linked, on, p_on, b.links) == expected.item);

  // Bypass: an unlinked item scores identically with and without KG enhancement.
  for (Index u = 0; u < 4; ++u) {
    CHECK(forward_score(u, unlinked, b.train.item_domain(unlinked), off, p_off, b) ==
          forward_score(u, unlinked, b.train.item_domain(unlinked), on, p_on, b));
  }
}

TEST_CASE("user encoders") {
  const DatasetBundle b = tiny_bundle();
  SUBCASE("base lookup returns the row verbatim") {
    ModelConfig c = variant_config("base");
    const Parameters p = Parameters::init(c, ModelShape::of(b), 1);
    const auto row = p.user.row(2);
    CHECK(encode_user_base(2, p) == Vec(row.begin(), row.end()));
    CHECK(encode_user_base(2, p) != encode_user_base(3, p));
    CHECK(forward_score(2, 5, 0, c, p, b) == score(encode_user_base(2, p), encode_item(5, c, p, b.links)));
  }
  SUBCASE("R_d picking the shared half returns the shared embedding") {
    ModelConfig c = variant_config("multd");
    c.dim = 2;
    c.r_d_hidden = 4;
    Parameters p = Parameters::init(c, ModelShape::of(b), 1);
    Mlp& r = p.combine[1];
    // hidden = relu([s; -s]), out = hidden[:2] - hidden[2:] = s.
    r.w1.values = {1, 0, 0, 0,   //
                   0, 1, 0, 0,   //
                   -1, 0, 0, 0,  //
                   0, -1, 0, 0};
    r.w2.values = {1, 0, -1, 0,  //
                   0, 1, 0, -1};
    const auto shared = p.user_shared.row(3);
    const Vec out = encode_user_multidomain(3, 1, p);
    CHECK(out[0] == doctest::Approx(shared[0]).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(shared[1]).epsilon(1e-15));
  }
  SUBCASE("multi-domain output matches the reference MLP and is defined for untrained users") {
    ModelConfig c = variant_config("multd");
    c.dim = 2;
    Parameters p = Parameters::init(c, ModelShape::of(b), 4);
    for (Index u = 0; u < 5; ++u) {
      for (Index d = 0; d < 3; ++d) {
        Vec x(p.user_shared.row(u).begin(), p.user_shared.row(u).end());
        x.insert(x.end(), p.user_domain[d].row(u).begin(), p.user_domain[d].row(u).end());
        const Vec expected = mlp_oracle(p.combine[d], x);
        const Vec got = encode_user_multidomain(u, d, p);
        REQUIRE(got.size() == 2);
        CHECK(got[0] == doctest::Approx(expected[0]).epsilon(1e-12));
        CHECK(got[1] == doctest::Approx(expected[1]).epsilon(1e-12));
        CHECK(std::isfinite(got[0]));
      }
    }
  }
}

TEST_CASE("GNN encoder") {
  std::mt19937_64 rng(8);
  const std::size_t h = 2;
  GnnWeights w{Tensor("w_q", h, h), Tensor("w_k", h, h), Tensor("w_v", h, h), Tensor("w_s", h, h),
               Tensor("w_a", 1, h)};
  for (Tensor* t : {&w.w_q, &w.w_k, &w.w_v, &w.w_s, &w.w_a}) fill_random(*t, rng);
  Tensor items("item", 6, h, true);
  fill_random(items, rng);
  const Vec q0 = {0.3, -0.7};

  SUBCASE("single neighbor gets all the attention") {
    GnnCache cache;
    const std::vector<Index> one = {4};
    gnn_forward(w, q0, one, items, 3, &cache);
    for (const auto& layer : cache.layers) CHECK(layer.attention == Vec{1.0});
  }
  SUBCASE("empty neighborhood depends only on the query and W_s") {
    const Vec out = gnn_forward(w, q0, {}, items, 2);
    Vec q = q0;
    for (int l = 0; l < 2; ++l) {
      Vec next(h);
      for (std::size_t i = 0; i < h; ++i) next[i] = std::tanh(w.w_s.values[i * h] * q[0] + w.w_s.values[i * h + 1] * q[1]);
      q = next;
    }
    CHECK(out.size() == h);
    CHECK(out[0] == doctest::Approx(q[0]).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(q[1]).epsilon(1e-15));
    Tensor other = items;
    fill_random(other, rng);
    CHECK(gnn_forward(w, q0, {}, other, 2) == out);
  }
  SUBCASE("three neighbors, one layer, step-by-step arithmetic") {
    w.w_q.values = {1, 0, 0, 1};
    w.w_k.values = {0.5, 0, 0, -0.5};
    w.w_v.values = {1, 1, 0, 1};
    w.w_s.values = {0.2, 0, 0, 0.2};
    w.w_a.values = {1, 2};
    items.values = {1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    const std::vector<Index> nbrs = {0, 1, 2};
    GnnCache cache;
    const Vec out = gnn_forward(w, Vec{0.1, 0.2}, nbrs, items, 1, &cache);

    const double s0 = std::tanh(0.1 + 0.5) + 2 * std::tanh(0.2 + 0.0);
    const double s1 = std::tanh(0.1 + 0.0) + 2 * std::tanh(0.2 - 0.5);
    const double s2 = std::tanh(0.1 + 0.5) + 2 * std::tanh(0.2 - 0.5);
    const double z = std::exp(s0) + std::exp(s1) + std::exp(s2);
    const double a0 = std::exp(s0) / z, a1 = std::exp(s1) / z, a2 = std::exp(s2) / z;
    const double p0 = a0 + a2, p1 = a1 + a2;  // sum_i alpha_i x_i
    const double m0 = p0 + p1, m1 = p1;       // W_v pooled
    CHECK(cache.layers[0].attention[0] == doctest::Approx(a0).epsilon(1e-12));
    CHECK(out[0] == doctest::Approx(std::tanh(0.02 + m0)).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(std::tanh(0.04 + m1)).epsilon(1e-12));
  }
  SUBCASE("attention is a probability distribution") {
    for (std::size_t n = 1; n <= 6; ++n) {
      std::vector<Index> nbrs(n);
      std::iota(nbrs.begin(), nbrs.end(), Index{0});
      GnnCache cache;
      gnn_forward(w, q0, nbrs, items, 2, &cache);
      for (const auto& layer : cache.layers) {
        double total = 0;
        for (double a : layer.attention) {
          CHECK(a >= 0);
          total += a;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("encoders return h-dimensional vectors for every variant") {
  const DatasetBundle b = tiny_bundle();
  for (const auto& [name, config] : standard_variants()) {
    ModelConfig c = config;
    c.dim = 8;
    const Parameters p = Parameters::init(c, ModelShape::of(b), 2);
    for (Index u = 0; u < 5; ++u) {  // user 4 has no neighbors
      for (Index d = 0; d < 3; ++d) CHECK(encode_user(u, d, c, p, b.train).size() == 8);
    }
    for (Index v = 0; v < 30; ++v) CHECK(encode_item(v, c, p, b.links).size() == 8);
  }
}

TEST_CASE("neighbor cap subsamples deterministically") {
  std::vector<Interaction> raw;
  for (Index v = 0; v < 100; ++v) raw.push_back({0, {v, 0}, 0});
  for (Index v = 0; v < 10; ++v) raw.push_back({1, {v, 0}, 0});
  const auto g = build_graph(raw, 2, std::vector<Index>(100, 0), 1);
  ModelConfig c = variant_config("multd-gnn");
  c.gnn_neighbor_cap = 16;
  const auto a = gnn_neighbors(c, g, 0);
  CHECK(a.size() == 16);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(gnn_neighbors(c, g, 0) == a);
  c.neighbor_seed = 99;
  CHECK(gnn_neighbors(c, g, 0) != a);
  CHECK(gnn_neighbors(c, g, 1).size() == 10);
}

TEST_CASE("backward of the score is the bilinear form") {
  const DatasetBundle b = tiny_bundle();
  const ModelConfig c = variant_config("base");
  const Parameters p = Parameters::init(c, ModelShape::of(b), 3);
  GradBuffer grads(p);
  ScoreCache cache;
  forward_score(1, 7, 0, c, p, b, &cache);
  backward(cache, 1.0, c, p, grads);
  for (std::size_t i = 0; i < c.dim; ++i) {
    CHECK(grads.at(p.user, 1, i) == p.item.row(7)[i]);
    CHECK(grads.at(p.item, 7, i) == p.user.row(1)[i]);
  }
}

TEST_CASE("inactive hinges contribute exactly zero gradient") {
  const DatasetBundle b = tiny_bundle();
  ModelConfig c = variant_config("kge");
  c.dim = 8;
  Parameters p = Parameters::init(c, ModelShape::of(b), 3);
  // Make the positive item score far above the negative for user 0.
  const Index pos = 1, neg = 2;
  std::fill(p.user.values.begin(), p.user.values.end(), 1.0);
  std::fill(p.item.row(pos).begin(), p.item.row(pos).end(), 10.0);
  std::fill(p.item.row(neg).begin(), p.item.row(neg).end(), -10.0);
  c.block = InteractionBlock::none;
  GradBuffer grads(p);
  const std::vector<RecExample> batch = {{0, 0, pos, {neg}}};
  CHECK(rec_objective(batch, 1.0, c, p, b, &grads) == 0.0);
  CHECK(grads.squared_norm() == 0.0);

  // KG: a true triple at distance 0 against a far corrupted tail.
  std::fill(p.entity.values.begin(), p.entity.values.end(), 0.0);
  std::fill(p.relation.values.begin(), p.relation.values.end(), 0.0);
  std::fill(p.entity.row(5).begin(), p.entity.row(5).end(), 10.0);
  const std::vector<KgExample> kg = {{{0, 0, 1}, 5}};
  const auto entity_items = items_of_entities(b.links, b.kg.num_entities);
  CHECK(kge_objective(kg, 1.0, c, p, b, entity_items, &grads) == 0.0);
  CHECK(grads.squared_norm() == 0.0);
}

TEST_CASE("model config validation and variants") {
  ModelConfig c;
  c.gnn = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.multi_domain = true;
  CHECK_NOTHROW(c.validate());
  c.dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  for (const char* name : {"base", "kge", "multd", "multd-kge", "multd-gnn", "multd-kge-gnn"}) {
    CHECK(variant_config(name).variant_name() == name);
  }
  CHECK_THROWS_AS(variant_config("gnn"), ConfigError);
  CHECK_THROWS_AS(parse_interaction_block("mlp"), ConfigError);
}

TEST_CASE("initialization bounds, zero biases and table shapes") {
  const DatasetBundle b = tiny_bundle();
  ModelConfig c = variant_config("multd-kge-gnn");
  c.dim = 16;
  const Parameters p = Parameters::init(c, ModelShape::of(b), 12);
  const double bound = 1.0 / 4.0;
  for (const Tensor* t : p.tensors()) {
    const bool bias = t->name.ends_with(".b1") || t->name.ends_with(".b2");
    for (double x : t->values) {
      if (bias) {
        CHECK(x == 0.0);
      } else {
        CHECK(std::abs(x) <= bound);
      }
    }
  }
  CHECK(p.item.rows == 30);
  CHECK(p.entity.rows == 12);
  CHECK(p.relation.rows == 3);
  CHECK(p.domain_query.rows == 3);
  CHECK(p.user.empty());
  CHECK(p.user_shared.empty());
  CHECK(p.gnn_domain.size() == 3);
  CHECK(p.combine[0].w1.rows == 16);
  CHECK(p.combine[0].w1.cols == 32);
  CHECK(p.mint.w1.rows == 32);
  CHECK(p.mint.w2.rows == 32);
  CHECK(Parameters::init(c, ModelShape::of(b), 12) == p);
  CHECK(!(Parameters::init(c, ModelShape::of(b), 13) == p));
}

TEST_CASE("grad_check flags a corrupted gradient") {
  GradCheckOptions options;
  options.corrupt = inject_gradient_fault;
  const auto report = grad_check(variant_config("base"), 1, options);
  CHECK_FALSE(report.passed());
  CHECK_FALSE(report.groups.front().passed);
  CHECK(grad_check(variant_config("base"), 1).passed());
}
