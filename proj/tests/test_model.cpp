#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rflab/model.hpp"
#include "rflab/rng.hpp"

using namespace rflab;

namespace {

VisionParams identity_vision(std::size_t d) {
  VisionParams p;
  p.W1 = DenseArray::zeros({d, d});
  p.b1 = DenseArray::zeros({d});
  p.W2 = DenseArray::zeros({d, d});
  p.b2 = DenseArray::zeros({d});
  for (std::size_t i = 0; i < d; ++i) {
    p.W1(i, i) = 1.0;
    p.W2(i, i) = 1.0;
  }
  return p;
}

VisionParams random_vision(const ModelConfig& cfg, Rng& rng) { return init_vision(cfg, rng); }

TextParams random_text(const ModelConfig& cfg, Rng& rng) { return init_text(cfg, rng); }

}  // namespace

TEST_CASE("vision_forward identity on positive inputs and zero on zero weights") {
  VisionParams p = identity_vision(3);
  std::vector<double> x{0.5, 1.0, 2.0};
  auto f = vision_forward(p, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(f[i] == doctest::Approx(x[i]).epsilon(1e-15));

  VisionParams z;
  z.W1 = DenseArray::zeros({4, 3});
  z.b1 = DenseArray::zeros({4});
  z.W2 = DenseArray::zeros({2, 4});
  z.b2 = DenseArray::zeros({2});
  auto fz = vision_forward(z, x);
  CHECK(fz[0] == 0.0);
  CHECK(fz[1] == 0.0);
}

TEST_CASE("vision_forward matches direct formula on random instances") {
  ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dim = 7;
  cfg.embed_dim = 4;
  Rng rng = Rng::stream(21, "vision_direct");
  for (int rep = 0; rep < 10; ++rep) {
    VisionParams p = random_vision(cfg, rng);
    std::vector<double> x(cfg.input_dim);
    for (double& v : x) v = rng.normal();

    std::vector<double> h(cfg.hidden_dim, 0.0);
    for (std::size_t i = 0; i < cfg.hidden_dim; ++i) {
      double z = p.b1.data[i];
      for (std::size_t j = 0; j < cfg.input_dim; ++j) z += p.W1(i, j) * x[j];
      h[i] = z > 0.0 ? z : 0.0;
    }
    std::vector<double> want(cfg.embed_dim, 0.0);
    for (std::size_t i = 0; i < cfg.embed_dim; ++i) {
      double z = p.b2.data[i];
      for (std::size_t j = 0; j < cfg.hidden_dim; ++j) z += p.W2(i, j) * h[j];
      want[i] = z;
    }
    auto got = vision_forward(p, x);
    for (std::size_t i = 0; i < cfg.embed_dim; ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("text_forward mean-pool properties") {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.token_dim = 5;
  cfg.embed_dim = 4;
  Rng rng = Rng::stream(22, "text_pool");
  TextParams p = random_text(cfg, rng);

  auto single = text_forward(p, TokenSeq{5});
  auto repeated = text_forward(p, TokenSeq{5, 5, 5, 5});
  for (std::size_t i = 0; i < single.size(); ++i)
    CHECK(repeated[i] == doctest::Approx(single[i]).epsilon(1e-12));

  // mean of one: Wp Emb[t] + bp by direct formula
  std::vector<double> want(cfg.embed_dim, 0.0);
  for (std::size_t i = 0; i < cfg.embed_dim; ++i) {
    double z = p.bp.data[i];
    for (std::size_t j = 0; j < cfg.token_dim; ++j) z += p.Wp(i, j) * p.Emb(5, j);
    want[i] = z;
  }
  for (std::size_t i = 0; i < single.size(); ++i)
    CHECK(single[i] == doctest::Approx(want[i]).epsilon(1e-12));

  TokenSeq t{2, 9, 4, 11};
  TokenSeq perm{11, 2, 4, 9};
  auto a = text_forward(p, t);
  auto b = text_forward(p, perm);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  CHECK_THROWS_AS(text_forward(p, TokenSeq{16}), std::invalid_argument);
}

TEST_CASE("zero_shot_head rows equal text features verbatim") {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.token_dim = 5;
  cfg.embed_dim = 4;
  Rng rng = Rng::stream(23, "zs_head");
  TextParams p = random_text(cfg, rng);

  std::vector<TokenSeq> same{{1, 2, 3}, {1, 2, 3}};
  HeadWeights w_same = zero_shot_head(p, same);
  for (std::size_t j = 0; j < cfg.embed_dim; ++j) CHECK(w_same.W(0, j) == w_same.W(1, j));

  std::vector<TokenSeq> texts{{1, 2}, {3, 4}, {5, 6}};
  HeadWeights w = zero_shot_head(p, texts);
  for (std::size_t k = 0; k < texts.size(); ++k) {
    auto g = text_forward(p, texts[k]);
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) CHECK(w.W(k, j) == g[j]);
  }

  CHECK_THROWS_AS(zero_shot_head(p, {TokenSeq{1}}), std::invalid_argument);
}

TEST_CASE("logits and energy agree with inner products") {
  const std::size_t D = 2;
  VisionParams p = identity_vision(D);

  HeadWeights w;
  w.W = DenseArray::zeros({D, D});
  w.W(0, 0) = 1.0;
  w.W(1, 1) = 1.0;
  std::vector<double> e1{1.0, 0.0};
  auto u = logits(w, p, e1);
  CHECK(u[0] == doctest::Approx(1.0));
  CHECK(u[1] == doctest::Approx(0.0));

  HeadWeights wz;
  wz.W = DenseArray::zeros({3, D});
  auto uz = logits(wz, p, e1);
  for (double v : uz) CHECK(v == 0.0);
}

TEST_CASE("energy is the negative feature inner product") {
  // Encoders rigged so F(x) = x and G(t) = Emb[t0]: all-ones features in D=2
  // give energy -2, orthogonal features give 0.
  const std::size_t D = 2;
  VisionParams theta = identity_vision(D);
  ModelConfig cfg;
  cfg.vocab = 4;
  cfg.token_dim = D;
  cfg.embed_dim = D;
  TextParams phi;
  phi.Emb = DenseArray::zeros({cfg.vocab, D});
  phi.Wp = DenseArray::zeros({D, D});
  phi.bp = DenseArray::zeros({D});
  phi.Wp(0, 0) = 1.0;
  phi.Wp(1, 1) = 1.0;
  phi.Emb(0, 0) = 1.0;  // token 0 -> e1
  phi.Emb(1, 1) = 1.0;  // token 1 -> e2
  phi.Emb(2, 0) = 1.0;  // token 2 -> all-ones
  phi.Emb(2, 1) = 1.0;

  std::vector<double> ones{1.0, 1.0};
  CHECK(energy(theta, phi, ones, TokenSeq{2}) == doctest::Approx(-2.0));
  std::vector<double> ex{1.0, 0.0};
  CHECK(energy(theta, phi, ex, TokenSeq{1}) == doctest::Approx(0.0));
}

TEST_CASE("text_logits match negated energies and direct inner products") {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dim = 6;
  cfg.embed_dim = 3;
  cfg.vocab = 12;
  cfg.token_dim = 5;
  Rng rng = Rng::stream(24, "text_logits");
  VisionParams theta = random_vision(cfg, rng);
  TextParams phi = random_text(cfg, rng);

  std::vector<double> x(cfg.input_dim);
  for (double& v : x) v = rng.normal();
  std::vector<TokenSeq> tokens{{0, 3}, {7, 2, 5}, {11}};

  auto v = text_logits(theta, phi, x, tokens);
  REQUIRE(v.size() == tokens.size());
  auto f = vision_forward(theta, x);
  for (std::size_t m = 0; m < tokens.size(); ++m) {
    CHECK(v[m] == doctest::Approx(-energy(theta, phi, x, tokens[m])).epsilon(1e-12));
    auto g = text_forward(phi, tokens[m]);
    double dot = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) dot += g[j] * f[j];
    CHECK(v[m] == doctest::Approx(dot).epsilon(1e-12));
  }
}

TEST_CASE("zero-shot logits equal negated class-text energies exactly") {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dim = 6;
  cfg.embed_dim = 3;
  cfg.vocab = 12;
  cfg.token_dim = 5;
  Rng rng = Rng::stream(25, "zs_energy");
  VisionParams theta = random_vision(cfg, rng);
  TextParams phi = random_text(cfg, rng);
  std::vector<TokenSeq> class_texts{{0, 1}, {2, 3}, {4, 5}};
  HeadWeights w = zero_shot_head(phi, class_texts);

  std::vector<double> x(cfg.input_dim);
  for (double& v : x) v = rng.normal();
  auto u = logits(w, theta, x);
  for (std::size_t k = 0; k < class_texts.size(); ++k)
    CHECK(u[k] == doctest::Approx(-energy(theta, phi, x, class_texts[k])).epsilon(1e-12));
}

TEST_CASE("parameter sets: global norm decomposes over layers") {
  ModelConfig cfg;
  Rng rng = Rng::stream(26, "norms");
  VisionParams theta = random_vision(cfg, rng);
  HeadWeights w;
  w.W = DenseArray::zeros({4, cfg.embed_dim});
  for (double& v : w.W.data) v = rng.normal();

  ParamSet p = pack_trainable(theta, w);
  double global = global_sqnorm(p);
  double per_layer = 0.0;
  for (const auto& [name, arr] : p) per_layer += layer_sqnorm(arr);
  CHECK(global == doctest::Approx(per_layer).epsilon(1e-9));

  VisionParams theta2;
  HeadWeights w2;
  unpack_trainable(p, theta2, w2);
  CHECK(theta2.W1.data == theta.W1.data);
  CHECK(theta2.b2.data == theta.b2.data);
  CHECK(w2.W.data == w.W.data);
}

TEST_CASE("forward passes are bitwise deterministic") {
  ModelConfig cfg;
  Rng rng = Rng::stream(27, "determinism");
  VisionParams theta = random_vision(cfg, rng);
  TextParams phi = random_text(cfg, rng);
  std::vector<double> x(cfg.input_dim);
  for (double& v : x) v = rng.normal();
  TokenSeq t{1, 2, 3, 4};

  auto f1 = vision_forward(theta, x);
  auto f2 = vision_forward(theta, x);
  CHECK(f1 == f2);
  auto g1 = text_forward(phi, t);
  auto g2 = text_forward(phi, t);
  CHECK(g1 == g2);
}
