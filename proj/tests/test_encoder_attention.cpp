#include <cmath>
#include <random>

#include "doctest.h"
#include "phrasemem/attention.hpp"
#include "phrasemem/encoder.hpp"
#include "phrasemem/gradcheck.hpp"
#include "test_support.hpp"

using namespace phrasemem;
using Vec = std::vector<double>;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.variant = Variant::gate;
  c.source_vocab = 7;
  c.target_vocab = 8;
  c.embed_dim = 3;
  c.hidden_dim = 4;
  c.max_phrases = 2;
  return c;
}

// Plain-double oracle, written against the cell formulas only.
Vec matvec(const ad::Parameter& m, const Vec& x) {
  Vec y(m.shape().rows, 0.0);
  for (std::size_t r = 0; r < y.size(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += m.value[r * m.shape().cols + c] * x[c];
  return y;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec plain_gru(const Model& m, const std::string& p, const Vec& x, const Vec& s) {
  auto P = [&](const char* n) -> const ad::Parameter& { return m.param(p + n); };
  const Vec wz = matvec(P(".W_z"), x), uz = matvec(P(".U_z"), s);
  const Vec wr = matvec(P(".W_r"), x), ur = matvec(P(".U_r"), s);
  Vec z(s.size()), r(s.size()), rs(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    z[i] = sig(wz[i] + uz[i] + P(".b_z").value[i]);
    r[i] = sig(wr[i] + ur[i] + P(".b_r").value[i]);
    rs[i] = r[i] * s[i];
  }
  const Vec wh = matvec(P(".W_h"), x), uh = matvec(P(".U_h"), rs);
  Vec out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    out[i] = (1 - z[i]) * s[i] + z[i] * std::tanh(wh[i] + uh[i] + P(".b_h").value[i]);
  return out;
}

Vec embed_row(const Model& m, int id) {
  const auto& e = m.param("enc.embed");
  const std::size_t d = e.shape().cols;
  return Vec(e.value.begin() + id * d, e.value.begin() + (id + 1) * d);
}

Vec tensor_vec(const ad::Tensor& t) { return Vec(t.value().begin(), t.value().end()); }

}  // namespace

TEST_CASE("GRU cell with zero weights halves the state") {
  Model m(small_config());
  ad::Graph g;
  const auto w = bind_gru(g, m.params(), "enc.fwd");
  const auto x = g.constant(ad::vector_shape(3), {1, 2, 3});
  const auto s = g.constant(ad::vector_shape(4), {0.4, -0.2, 1.0, 0.0});
  const auto out = gru_cell(w, x, s);
  CHECK(tensor_vec(out) == Vec{0.2, -0.1, 0.5, 0.0});
}

TEST_CASE("GRU cell matches the plain-double formulas") {
  Model m(small_config());
  testing::randomize(m, 12, 0.7);
  ad::Graph g;
  const auto w = bind_gru(g, m.params(), "enc.bwd");
  const Vec x{0.3, -0.9, 0.5}, s{0.1, 0.2, -0.6, 0.8};
  const auto out = gru_cell(w, g.constant(ad::vector_shape(3), x), g.constant(ad::vector_shape(4), s));
  const Vec ref = plain_gru(m, "enc.bwd", x, s);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-14));
}

TEST_CASE("encoder annotations are forward and backward GRU runs") {
  Model m(small_config());
  testing::randomize(m, 5, 0.6);
  const std::vector<int> ids{4, 6, 5, 4};
  const Vec tags(ids.size() * 2, 0.0);
  ad::Graph g;
  const auto enc = encode(g, m, ids, tags);
  REQUIRE(enc.annotations().shape() == ad::Shape{8, 4});

  std::vector<Vec> fwd(4), bwd(4);
  Vec s(4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) fwd[i] = s = plain_gru(m, "enc.fwd", embed_row(m, ids[i]), s);
  s.assign(4, 0.0);
  for (std::size_t i = 4; i-- > 0;) bwd[i] = s = plain_gru(m, "enc.bwd", embed_row(m, ids[i]), s);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(enc.annotations().at(k, i) == doctest::Approx(fwd[i][k]).epsilon(1e-13));
      CHECK(enc.annotations().at(4 + k, i) == doctest::Approx(bwd[i][k]).epsilon(1e-13));
    }
  for (std::size_t k = 0; k < 4; ++k)
    CHECK(enc.backward_first()[k] == doctest::Approx(bwd[0][k]).epsilon(1e-13));
}

TEST_CASE("tag block layout and zeroing") {
  Model m(small_config());
  testing::randomize(m, 2);
  const std::vector<int> ids{4, 5, 6};
  // Position-major as annotate() produces: slot 0 at position 1, slot 1 at 2.
  const Vec tag_matrix{0, 0, 1, 0, 0, 1};
  ad::Graph g;
  auto enc = encode(g, m, ids, tag_matrix);
  CHECK(enc.tag(1, 0) == 1.0);
  CHECK(enc.tag(2, 1) == 1.0);
  CHECK(enc.tag(1, 1) == 0.0);
  const auto t = enc.tagged();
  REQUIRE(t.shape() == ad::Shape{10, 3});
  CHECK(t.at(8, 1) == 1.0);
  CHECK(t.at(9, 2) == 1.0);
  CHECK(t.at(8, 2) == 0.0);
  CHECK(t.at(0, 0) == enc.annotations().at(0, 0));

  CHECK(enc.tag_version() == 0);
  enc.zero_tags({1, 2});
  CHECK(enc.tag_version() == 1);
  CHECK(enc.tag(1, 0) == 0.0);
  CHECK(enc.tag(2, 1) == 1.0);
  CHECK_THROWS_AS(enc.zero_tags({2, 4}), ad::DimensionError);

  CHECK_THROWS_AS(encode(g, m, ids, Vec(5, 0.0)), ad::DimensionError);
  CHECK_THROWS_AS(encode(g, m, std::vector<int>{}, Vec{}), std::invalid_argument);
  CHECK_THROWS_AS(encode(g, m, std::vector<int>{9}, Vec(2, 0.0)), std::out_of_range);
}

TEST_CASE("attention with a zero scorer is uniform") {
  Model m(small_config());
  testing::randomize(m, 9);
  m.params().at("att.v").value.assign(4, 0.0);
  const std::vector<int> ids{4, 5, 6, 4};
  ad::Graph g;
  const auto enc = encode(g, m, ids, Vec{1, 0, 0, 0, 0, 1, 0, 0});
  const auto mem = attention_memory(g, m, enc);
  const auto s = g.constant(ad::vector_shape(4), {0.1, 0.2, 0.3, 0.4});
  const auto e = g.constant(ad::vector_shape(3), {1, -1, 0.5});
  const auto r = attend(g, m, mem, s, e);
  REQUIRE(r.weights.shape() == ad::Shape{1, 4});
  REQUIRE(r.context.shape() == ad::vector_shape(10));
  for (std::size_t j = 0; j < 4; ++j) CHECK(r.weights[j] == doctest::Approx(0.25));
  for (std::size_t k = 0; k < 10; ++k) {
    double mean = 0;
    for (std::size_t j = 0; j < 4; ++j) mean += mem.annotations.at(k, j) / 4;
    CHECK(r.context[k] == doctest::Approx(mean).epsilon(1e-14));
  }
  CHECK(r.context[8] == doctest::Approx(0.25));  // tag slot 0 is set at one of four positions

  SUBCASE("masked positions get no weight") {
    const std::vector<bool> mask{true, false, true, false};
    const auto rm = attend(g, m, mem, s, e, &mask);
    CHECK(rm.weights[1] == 0.0);
    CHECK(rm.weights[3] == 0.0);
    CHECK(rm.weights[0] == doctest::Approx(0.5));
    const std::vector<bool> one{false, false, true, false};
    const auto r1 = attend(g, m, mem, s, e, &one);
    for (std::size_t k = 0; k < 10; ++k) CHECK(r1.context[k] == mem.annotations.at(k, 2));
  }
  SUBCASE("bad masks") {
    const std::vector<bool> none(4, false), short_mask(3, true);
    CHECK_THROWS_AS(attend(g, m, mem, s, e, &none), ad::ContractError);
    CHECK_THROWS_AS(attend(g, m, mem, s, e, &short_mask), ad::DimensionError);
  }
}

TEST_CASE("attention weights match the scoring formula") {
  Model m(small_config());
  testing::randomize(m, 31, 0.8);
  const std::vector<int> ids{4, 6, 5};
  ad::Graph g;
  const auto enc = encode(g, m, ids, Vec{0, 1, 0, 0, 1, 0});
  const auto mem = attention_memory(g, m, enc);
  const Vec s{0.3, -0.1, 0.2, 0.5}, e{0.2, 0.4, -0.3};
  const auto r = attend(g, m, mem, g.constant(ad::vector_shape(4), s), g.constant(ad::vector_shape(3), e));

  const Vec ws = matvec(m.param("att.W_s"), s), we = matvec(m.param("att.W_e"), e);
  Vec scores(3);
  for (std::size_t j = 0; j < 3; ++j) {
    Vec col(10);
    for (std::size_t k = 0; k < 10; ++k) col[k] = mem.annotations.at(k, j);
    const Vec wh = matvec(m.param("att.W_h"), col);
    for (std::size_t k = 0; k < 4; ++k)
      scores[j] += m.param("att.v").value[k] * std::tanh(ws[k] + wh[k] + we[k] + m.param("att.b").value[k]);
  }
  double z = 0;
  for (double v : scores) z += std::exp(v);
  for (std::size_t j = 0; j < 3; ++j) CHECK(r.weights[j] == doctest::Approx(std::exp(scores[j]) / z).epsilon(1e-13));
}

TEST_CASE("attention memory follows tag changes") {
  Model m(small_config());
  testing::randomize(m, 4);
  const std::vector<int> ids{4, 5};
  ad::Graph g;
  auto enc = encode(g, m, ids, Vec{1, 0, 0, 0});
  const auto before = attention_memory(g, m, enc);
  enc.zero_tags({0, 1});
  const auto after = attention_memory(g, m, enc);
  CHECK(after.tag_version == 1);
  CHECK(before.annotations.at(8, 0) == 1.0);
  CHECK(after.annotations.at(8, 0) == 0.0);
  CHECK(after.keys.shape() == ad::Shape{4, 2});
}

namespace {

// Long-double evaluation of the loss below, straight from the formulas.
template <typename T>
using LVec = std::vector<T>;

template <typename T>
LVec<T> lmatvec(const ad::Parameter& m, const LVec<T>& x) {
  LVec<T> y(m.shape().rows, T(0));
  for (std::size_t r = 0; r < y.size(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += T(m.value[r * m.shape().cols + c]) * x[c];
  return y;
}

template <typename T>
LVec<T> lgru(const Model& m, const std::string& p, const LVec<T>& x, const LVec<T>& s) {
  auto P = [&](const char* n) -> const ad::Parameter& { return m.param(p + n); };
  auto sg = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
  const auto wz = lmatvec(P(".W_z"), x), uz = lmatvec(P(".U_z"), s);
  const auto wr = lmatvec(P(".W_r"), x), ur = lmatvec(P(".U_r"), s);
  LVec<T> z(s.size()), rs(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    z[i] = sg(wz[i] + uz[i] + T(P(".b_z").value[i]));
    rs[i] = sg(wr[i] + ur[i] + T(P(".b_r").value[i])) * s[i];
  }
  const auto wh = lmatvec(P(".W_h"), x), uh = lmatvec(P(".U_h"), rs);
  LVec<T> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    out[i] = (T(1) - z[i]) * s[i] + z[i] * std::tanh(wh[i] + uh[i] + T(P(".b_h").value[i]));
  return out;
}

template <typename T>
T oracle_loss(const Model& m, const std::vector<int>& ids, const Vec& tag_matrix, const Vec& e_prev) {
  const auto& c = m.config();
  const std::size_t n = ids.size(), h = c.hidden_dim, d = c.embed_dim;
  auto x = [&](int id) {
    LVec<T> v(d);
    for (std::size_t k = 0; k < d; ++k) v[k] = T(m.param("enc.embed").value[id * d + k]);
    return v;
  };
  std::vector<LVec<T>> fwd(n), bwd(n);
  LVec<T> s(h, T(0));
  for (std::size_t i = 0; i < n; ++i) fwd[i] = s = lgru<T>(m, "enc.fwd", x(ids[i]), s);
  s.assign(h, T(0));
  for (std::size_t i = n; i-- > 0;) bwd[i] = s = lgru<T>(m, "enc.bwd", x(ids[i]), s);

  std::vector<LVec<T>> cols(n);
  for (std::size_t i = 0; i < n; ++i) {
    cols[i] = fwd[i];
    cols[i].insert(cols[i].end(), bwd[i].begin(), bwd[i].end());
    for (std::size_t k = 0; k < c.max_phrases; ++k) cols[i].push_back(T(tag_matrix[i * c.max_phrases + k]));
  }
  LVec<T> q(h);
  for (std::size_t k = 0; k < h; ++k) q[k] = std::tanh(bwd[0][k]);
  const auto ws = lmatvec(m.param("att.W_s"), q);
  const auto we = lmatvec(m.param("att.W_e"), LVec<T>(e_prev.begin(), e_prev.end()));
  LVec<T> score(n, T(0));
  for (std::size_t j = 0; j < n; ++j) {
    const auto wh = lmatvec(m.param("att.W_h"), cols[j]);
    for (std::size_t k = 0; k < h; ++k)
      score[j] += T(m.param("att.v").value[k]) * std::tanh(ws[k] + wh[k] + we[k] + T(m.param("att.b").value[k]));
  }
  T z = 0;
  for (T v : score) z += std::exp(v);
  LVec<T> out(cols[0].size(), T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += std::exp(score[j]) / z * cols[j][k];
  out.insert(out.end(), bwd[0].begin(), bwd[0].end());
  T lse = 0;
  for (T v : out) lse += std::exp(v);
  return std::log(lse);
}

}  // namespace

TEST_CASE("encoder and attention gradients match finite differences") {
  Model m(small_config());
  testing::randomize(m, 44, 0.5);
  std::vector<ad::Parameter*> ps;
  for (auto& p : m.params()) {
    const auto group = parameter_group(p.name());
    if (group == "enc" || group == "att") ps.push_back(&p);
  }
  const std::vector<int> ids{4, 6, 5};
  const Vec tags{0, 1, 1, 0, 0, 0};
  const Vec e_prev{0.5, -0.5, 0.25};
  const ad::LossBuilder tape = [&](ad::Graph& g) {
    const auto enc = encode(g, m, ids, tags);
    const auto mem = attention_memory(g, m, enc);
    const auto r = attend(g, m, mem, ad::tanh(enc.backward_first()),
                          g.constant(ad::vector_shape(3), e_prev));
    return ad::logsumexp(ad::concat_rows({r.context, enc.backward_first()}));
  };

  ad::Graph g(false);
  CHECK(tape(g).item() == doctest::Approx(static_cast<double>(oracle_loss<long double>(m, ids, tags, e_prev))).epsilon(1e-14));

  const auto rep = ad::finite_diff_check(
      tape, [&] { return oracle_loss<long double>(m, ids, tags, e_prev); }, ps, 1e-5, 1e-6);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error <= 1e-6);
  CHECK(rep.params.size() == ps.size());
}
