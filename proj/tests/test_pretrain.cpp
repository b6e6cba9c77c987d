#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rflab/metrics.hpp"
#include "rflab/numerics.hpp"
#include "rflab/pretrain.hpp"

using namespace rflab;

namespace {

Benchmark small_benchmark(std::uint64_t seed) {
  BenchmarkSpec spec;
  spec.classes = 4;
  spec.input_dim = 6;
  spec.shift_domains = 1;
  spec.angle_scales = {0.5};
  spec.bias_scales = {0.5};
  spec.n_pretrain = 64;
  spec.n_train = 32;
  spec.n_val = 16;
  spec.n_test_per_domain = 16;
  spec.seed = seed;
  return make_benchmark(spec, 32, 4);
}

ModelConfig small_arch() {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dim = 8;
  cfg.embed_dim = 4;
  cfg.vocab = 32;
  cfg.token_dim = 4;
  cfg.token_len = 4;
  return cfg;
}

}  // namespace

TEST_CASE("info_nce_loss equals ln B at the all-zero-feature point") {
  VisionParams vision;
  vision.W1 = DenseArray::zeros({8, 6});
  vision.b1 = DenseArray::zeros({8});
  vision.W2 = DenseArray::zeros({4, 8});
  vision.b2 = DenseArray::zeros({4});
  TextParams text;
  text.Emb = DenseArray::zeros({32, 4});
  text.Wp = DenseArray::zeros({4, 4});
  text.bp = DenseArray::zeros({4});

  const std::size_t B = 5;
  DenseArray x = DenseArray::zeros({B, 6});
  std::vector<TokenSeq> texts(B, TokenSeq{1, 2});
  double loss = info_nce_loss(vision, text, x, texts, 0.5, nullptr, nullptr);
  CHECK(loss == doctest::Approx(std::log(double(B))).epsilon(1e-12));
  CHECK(loss >= 0.0);
}

TEST_CASE("info_nce_loss rejects tiny batches and bad temperature") {
  VisionParams vision;
  vision.W1 = DenseArray::zeros({2, 2});
  vision.b1 = DenseArray::zeros({2});
  vision.W2 = DenseArray::zeros({2, 2});
  vision.b2 = DenseArray::zeros({2});
  TextParams text;
  text.Emb = DenseArray::zeros({4, 2});
  text.Wp = DenseArray::zeros({2, 2});
  text.bp = DenseArray::zeros({2});
  DenseArray one = DenseArray::zeros({1, 2});
  CHECK_THROWS_AS(info_nce_loss(vision, text, one, {TokenSeq{0}}, 0.5, nullptr, nullptr),
                  std::invalid_argument);
  DenseArray two = DenseArray::zeros({2, 2});
  std::vector<TokenSeq> texts{{0}, {1}};
  CHECK_THROWS_AS(info_nce_loss(vision, text, two, texts, 0.0, nullptr, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(info_nce_loss(vision, text, two, {TokenSeq{0}}, 0.5, nullptr, nullptr),
                  std::invalid_argument);
}

TEST_CASE("info_nce_loss matches a direct two-sided cross-entropy oracle") {
  ModelConfig arch = small_arch();
  Rng rng = Rng::stream(41, "nce_oracle");
  VisionParams vision = init_vision(arch, rng);
  TextParams text = init_text(arch, rng);

  const std::size_t B = 6;
  DenseArray x = DenseArray::zeros({B, arch.input_dim});
  for (double& v : x.data) v = rng.normal();
  std::vector<TokenSeq> texts;
  for (std::size_t i = 0; i < B; ++i)
    texts.push_back(sample_random_tokens(rng, 1, arch.token_len, arch.vocab)[0]);

  const double tau = 0.7;
  double loss = info_nce_loss(vision, text, x, texts, tau, nullptr, nullptr);

  DenseArray f = vision_forward(vision, x);
  DenseArray g = text_forward(text, texts);
  double want = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> row(B), col(B);
    for (std::size_t j = 0; j < B; ++j) {
      double sij = 0.0, sji = 0.0;
      for (std::size_t d = 0; d < std::size_t(arch.embed_dim); ++d) {
        sij += f(i, d) * g(j, d);
        sji += f(j, d) * g(i, d);
      }
      row[j] = sij / tau;
      col[j] = sji / tau;
    }
    want += 0.5 * cross_entropy(row, i) / double(B);
    want += 0.5 * cross_entropy(col, i) / double(B);
  }
  CHECK(loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("contrastive loss vanishes for strongly diagonal score matrices") {
  // Rig F and G so <F(x_i), G(t_j)> = c on the diagonal and 0 off it, by
  // using one-hot inputs and one-hot token embeddings.
  const std::size_t B = 3;
  VisionParams vision;
  vision.W1 = DenseArray::zeros({B, B});
  vision.b1 = DenseArray::zeros({B});
  vision.W2 = DenseArray::zeros({B, B});
  vision.b2 = DenseArray::zeros({B});
  TextParams text;
  text.Emb = DenseArray::zeros({B, B});
  text.Wp = DenseArray::zeros({B, B});
  text.bp = DenseArray::zeros({B});
  const double c = 60.0;
  for (std::size_t i = 0; i < B; ++i) {
    vision.W1(i, i) = 1.0;
    vision.W2(i, i) = c;
    text.Emb(i, i) = 1.0;
    text.Wp(i, i) = 1.0;
  }
  DenseArray x = DenseArray::zeros({B, B});
  std::vector<TokenSeq> texts;
  for (std::size_t i = 0; i < B; ++i) {
    x(i, i) = 1.0;
    texts.push_back(TokenSeq{std::uint32_t(i)});
  }
  double loss = info_nce_loss(vision, text, x, texts, 1.0, nullptr, nullptr);
  CHECK(loss < 1e-10);
}

TEST_CASE("pretraining with zero steps or zero lr leaves the initialization unchanged") {
  Benchmark bench = small_benchmark(2);
  ModelConfig arch = small_arch();

  PretrainConfig cfg;
  cfg.steps = 0;
  cfg.batch = 8;
  cfg.lr = 1e-3;
  cfg.seed = 2;
  PretrainedModel zero_steps = contrastive_pretrain(bench, arch, cfg);

  Rng iv = Rng::stream(2, "init:vision");
  Rng it = Rng::stream(2, "init:text");
  VisionParams v0 = init_vision(arch, iv);
  TextParams t0 = init_text(arch, it);
  CHECK(zero_steps.vision.W1.data == v0.W1.data);
  CHECK(zero_steps.text.Emb.data == t0.Emb.data);

  cfg.steps = 5;
  cfg.lr = 0.0;
  PretrainedModel zero_lr = contrastive_pretrain(bench, arch, cfg);
  CHECK(zero_lr.vision.W1.data == v0.W1.data);
  CHECK(zero_lr.vision.b2.data == v0.b2.data);
  CHECK(zero_lr.text.Wp.data == t0.Wp.data);
}

TEST_CASE("pretraining never mutates the benchmark") {
  Benchmark bench = small_benchmark(3);
  std::vector<double> x_before = bench.pretrain_inputs.x.data;
  std::vector<double> proto_before = bench.prototypes.data;
  PretrainConfig cfg;
  cfg.steps = 10;
  cfg.batch = 8;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  contrastive_pretrain(bench, small_arch(), cfg);
  CHECK(bench.pretrain_inputs.x.data == x_before);
  CHECK(bench.prototypes.data == proto_before);
}

TEST_CASE("default pretraining halves the loss and reaches usable zero-shot accuracy") {
  // 5-seed median: final minibatch loss under half the initial one, and the
  // zero-shot head classifies the reference test set at 0.8 or better.
  std::vector<double> ratios, zs_accs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    BenchmarkSpec spec;
    spec.seed = seed;
    ModelConfig arch;
    Benchmark bench = make_benchmark(spec, arch.vocab, arch.token_len);
    PretrainConfig cfg;
    cfg.seed = seed;
    std::vector<double> trace;
    PretrainedModel model = contrastive_pretrain(bench, arch, cfg, &trace);
    REQUIRE(trace.size() == cfg.steps);
    ratios.push_back(trace.back() / trace.front());

    std::vector<TokenSeq> class_texts;
    for (std::size_t k = 0; k < spec.classes; ++k)
      class_texts.push_back(class_token_seq(k, arch.token_len, arch.vocab));
    HeadWeights w = zero_shot_head(model.text, class_texts);
    DenseArray u = head_logits(w, vision_forward(model.vision, bench.ref_test.x));
    zs_accs.push_back(accuracy(u, bench.ref_test.labels));
  }
  std::sort(ratios.begin(), ratios.end());
  std::sort(zs_accs.begin(), zs_accs.end());
  CHECK(ratios[2] < 0.5);
  CHECK(zs_accs[2] >= 0.8);
}
