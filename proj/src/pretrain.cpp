#include "rflab/pretrain.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rflab/numerics.hpp"

namespace rflab {

double info_nce_loss(const VisionParams& vision, const TextParams& text, const DenseArray& x,
                     const std::vector<TokenSeq>& texts, double tau, VisionParams* vision_grad,
                     TextParams* text_grad) {
  std::size_t B = x.rows();
  if (B < 2) throw std::invalid_argument("info_nce_loss: batch must have at least 2 pairs");
  if (texts.size() != B) throw std::invalid_argument("info_nce_loss: image/text count mismatch");
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce_loss: temperature must be positive");

  VisionCache vc;
  TextCache tc;
  DenseArray f = vision_forward(vision, x, vision_grad ? &vc : nullptr);
  DenseArray g = text_forward(text, texts, text_grad ? &tc : nullptr);
  std::size_t D = f.cols();

  DenseArray scores = DenseArray::zeros({B, B});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += f(i, d) * g(j, d);
      scores(i, j) = s / tau;
    }

  double loss = 0.0;
  std::vector<double> row(B), col(B);
  DenseArray d_scores = DenseArray::zeros({B, B});
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) row[j] = scores(i, j);
    loss += 0.5 * cross_entropy(row, i) / double(B);
    std::vector<double> p = softmax(row);
    for (std::size_t j = 0; j < B; ++j)
      d_scores(i, j) += 0.5 * (p[j] - (i == j ? 1.0 : 0.0)) / double(B);
  }
  for (std::size_t j = 0; j < B; ++j) {
    for (std::size_t i = 0; i < B; ++i) col[i] = scores(i, j);
    loss += 0.5 * cross_entropy(col, j) / double(B);
    std::vector<double> p = softmax(col);
    for (std::size_t i = 0; i < B; ++i)
      d_scores(i, j) += 0.5 * (p[i] - (i == j ? 1.0 : 0.0)) / double(B);
  }

  if (vision_grad) {
    DenseArray gf = DenseArray::zeros({B, D});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j) {
        double w = d_scores(i, j) / tau;
        for (std::size_t d = 0; d < D; ++d) gf(i, d) += w * g(j, d);
      }
    vision_backward(vision, vc, gf, *vision_grad);
  }
  if (text_grad) {
    DenseArray gg = DenseArray::zeros({B, D});
    for (std::size_t j = 0; j < B; ++j)
      for (std::size_t i = 0; i < B; ++i) {
        double w = d_scores(i, j) / tau;
        for (std::size_t d = 0; d < D; ++d) gg(j, d) += w * f(i, d);
      }
    text_backward(text, tc, gg, *text_grad);
  }
  return loss;
}

static void sgd_step(DenseArray& p, const DenseArray& g, double lr) {
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= lr * g.data[i];
}

PretrainedModel contrastive_pretrain(const Benchmark& bench, const ModelConfig& arch,
                                     const PretrainConfig& cfg, std::vector<double>* loss_trace) {
  if (cfg.batch < 2) throw std::invalid_argument("contrastive_pretrain: batch must be at least 2");
  if (!(cfg.temperature > 0.0))
    throw std::invalid_argument("contrastive_pretrain: temperature must be positive");

  Rng init_v = Rng::stream(cfg.seed, "init:vision");
  Rng init_t = Rng::stream(cfg.seed, "init:text");
  PretrainedModel model{arch, init_vision(arch, init_v), init_text(arch, init_t)};

  std::size_t n = bench.pretrain_inputs.x.rows();
  Rng batch_rng = Rng::stream(cfg.seed, "pretrain:batches");
  DenseArray xb = DenseArray::zeros({cfg.batch, arch.input_dim});
  std::vector<TokenSeq> tb(cfg.batch);

  for (std::size_t s = 0; s < cfg.steps; ++s) {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      std::size_t idx = batch_rng.below(n);
      for (std::size_t j = 0; j < arch.input_dim; ++j)
        xb(b, j) = bench.pretrain_inputs.x(idx, j);
      tb[b] = bench.pretrain_texts[idx];
    }
    VisionParams gv = zeros_like(model.vision);
    TextParams gt = zeros_like(model.text);
    double loss = info_nce_loss(model.vision, model.text, xb, tb, cfg.temperature, &gv, &gt);
    if (!std::isfinite(loss))
      throw std::runtime_error("contrastive_pretrain: non-finite loss at step " + std::to_string(s));
    if (loss_trace) loss_trace->push_back(loss);
    sgd_step(model.vision.W1, gv.W1, cfg.lr);
    sgd_step(model.vision.b1, gv.b1, cfg.lr);
    sgd_step(model.vision.W2, gv.W2, cfg.lr);
    sgd_step(model.vision.b2, gv.b2, cfg.lr);
    sgd_step(model.text.Emb, gt.Emb, cfg.lr);
    sgd_step(model.text.Wp, gt.Wp, cfg.lr);
    sgd_step(model.text.bp, gt.bp, cfg.lr);
  }
  return model;
}

}  // namespace rflab
