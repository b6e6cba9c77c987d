#include "rflab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace rflab {

static DenseArray gaussian(std::vector<std::size_t> shape, double scale, Rng& rng) {
  DenseArray a = DenseArray::zeros(std::move(shape));
  for (double& x : a.data) x = scale * rng.normal();
  return a;
}

VisionParams init_vision(const ModelConfig& cfg, Rng& rng) {
  VisionParams p;
  p.W1 = gaussian({cfg.hidden_dim, cfg.input_dim}, 1.0 / std::sqrt(double(cfg.input_dim)), rng);
  p.b1 = DenseArray::zeros({cfg.hidden_dim});
  p.W2 = gaussian({cfg.embed_dim, cfg.hidden_dim}, 1.0 / std::sqrt(double(cfg.hidden_dim)), rng);
  p.b2 = DenseArray::zeros({cfg.embed_dim});
  return p;
}

TextParams init_text(const ModelConfig& cfg, Rng& rng) {
  TextParams p;
  // Embedding rows are lookups (fan-in 1), so they keep unit scale.
  p.Emb = gaussian({cfg.vocab, cfg.token_dim}, 1.0, rng);
  p.Wp = gaussian({cfg.embed_dim, cfg.token_dim}, 1.0 / std::sqrt(double(cfg.token_dim)), rng);
  p.bp = DenseArray::zeros({cfg.embed_dim});
  return p;
}

VisionParams zeros_like(const VisionParams& p) {
  VisionParams g;
  g.W1 = DenseArray::zeros(p.W1.shape);
  g.b1 = DenseArray::zeros(p.b1.shape);
  g.W2 = DenseArray::zeros(p.W2.shape);
  g.b2 = DenseArray::zeros(p.b2.shape);
  return g;
}

TextParams zeros_like(const TextParams& p) {
  TextParams g;
  g.Emb = DenseArray::zeros(p.Emb.shape);
  g.Wp = DenseArray::zeros(p.Wp.shape);
  g.bp = DenseArray::zeros(p.bp.shape);
  return g;
}

DenseArray vision_forward(const VisionParams& p, const DenseArray& x, VisionCache* cache) {
  if (x.shape.size() != 2 || x.cols() != p.W1.cols())
    throw std::invalid_argument("vision_forward: input shape mismatch");
  std::size_t B = x.rows(), H = p.W1.rows(), D = p.W2.rows();
  if (p.b1.numel() != H || p.W2.cols() != H || p.b2.numel() != D)
    throw std::invalid_argument("vision_forward: parameter shape mismatch");

  DenseArray z1 = DenseArray::zeros({B, H});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < H; ++j) {
      double s = p.b1[j];
      for (std::size_t k = 0; k < x.cols(); ++k) s += p.W1(j, k) * x(i, k);
      z1(i, j) = s;
    }
  DenseArray h = z1;
  for (double& v : h.data) v = v > 0.0 ? v : 0.0;

  DenseArray f = DenseArray::zeros({B, D});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      double s = p.b2[j];
      for (std::size_t k = 0; k < H; ++k) s += p.W2(j, k) * h(i, k);
      f(i, j) = s;
    }
  if (cache) {
    cache->x = x;
    cache->z1 = std::move(z1);
    cache->h = std::move(h);
  }
  return f;
}

std::vector<double> vision_forward(const VisionParams& p, const std::vector<double>& x) {
  DenseArray xb = DenseArray::from({1, x.size()}, x);
  DenseArray f = vision_forward(p, xb);
  return f.data;
}

void vision_backward(const VisionParams& p, const VisionCache& cache, const DenseArray& g_feat,
                     VisionParams& grad) {
  std::size_t B = cache.x.rows(), H = p.W1.rows(), D = p.W2.rows();
  if (g_feat.rows() != B || g_feat.cols() != D)
    throw std::invalid_argument("vision_backward: gradient shape mismatch");
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      double g = g_feat(i, j);
      grad.b2[j] += g;
      for (std::size_t k = 0; k < H; ++k) grad.W2(j, k) += g * cache.h(i, k);
    }
    for (std::size_t k = 0; k < H; ++k) {
      if (cache.z1(i, k) <= 0.0) continue;
      double gz = 0.0;
      for (std::size_t j = 0; j < D; ++j) gz += p.W2(j, k) * g_feat(i, j);
      grad.b1[k] += gz;
      for (std::size_t m = 0; m < cache.x.cols(); ++m) grad.W1(k, m) += gz * cache.x(i, m);
    }
  }
}

DenseArray text_forward(const TextParams& p, const std::vector<TokenSeq>& seqs, TextCache* cache) {
  if (seqs.empty()) throw std::invalid_argument("text_forward: empty batch");
  std::size_t V = p.Emb.rows(), de = p.Emb.cols(), D = p.Wp.rows();
  if (p.Wp.cols() != de || p.bp.numel() != D)
    throw std::invalid_argument("text_forward: parameter shape mismatch");

  DenseArray pooled = DenseArray::zeros({seqs.size(), de});
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const TokenSeq& t = seqs[i];
    if (t.empty()) throw std::invalid_argument("text_forward: empty token sequence");
    for (std::uint32_t id : t) {
      if (id >= V) throw std::invalid_argument("text_forward: token id out of range");
      for (std::size_t j = 0; j < de; ++j) pooled(i, j) += p.Emb(id, j);
    }
    for (std::size_t j = 0; j < de; ++j) pooled(i, j) /= double(t.size());
  }

  DenseArray g = DenseArray::zeros({seqs.size(), D});
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (std::size_t j = 0; j < D; ++j) {
      double s = p.bp[j];
      for (std::size_t k = 0; k < de; ++k) s += p.Wp(j, k) * pooled(i, k);
      g(i, j) = s;
    }
  if (cache) {
    cache->seqs = seqs;
    cache->pooled = std::move(pooled);
  }
  return g;
}

std::vector<double> text_forward(const TextParams& p, const TokenSeq& t) {
  DenseArray g = text_forward(p, std::vector<TokenSeq>{t});
  return g.data;
}

void text_backward(const TextParams& p, const TextCache& cache, const DenseArray& g_feat,
                   TextParams& grad) {
  std::size_t n = cache.seqs.size(), de = p.Emb.cols(), D = p.Wp.rows();
  if (g_feat.rows() != n || g_feat.cols() != D)
    throw std::invalid_argument("text_backward: gradient shape mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      double g = g_feat(i, j);
      grad.bp[j] += g;
      for (std::size_t k = 0; k < de; ++k) grad.Wp(j, k) += g * cache.pooled(i, k);
    }
    const TokenSeq& t = cache.seqs[i];
    double inv_len = 1.0 / double(t.size());
    for (std::size_t k = 0; k < de; ++k) {
      double ge = 0.0;
      for (std::size_t j = 0; j < D; ++j) ge += p.Wp(j, k) * g_feat(i, j);
      ge *= inv_len;
      for (std::uint32_t id : t) grad.Emb(id, k) += ge;
    }
  }
}

HeadWeights zero_shot_head(const TextParams& p, const std::vector<TokenSeq>& class_texts) {
  if (class_texts.size() < 2)
    throw std::invalid_argument("zero_shot_head: need at least 2 class texts");
  DenseArray g = text_forward(p, class_texts);
  return HeadWeights{std::move(g)};
}

DenseArray head_logits(const HeadWeights& w, const DenseArray& features) {
  if (features.shape.size() != 2 || features.cols() != w.W.cols())
    throw std::invalid_argument("head_logits: feature width mismatch");
  std::size_t B = features.rows(), K = w.W.rows(), D = w.W.cols();
  DenseArray u = DenseArray::zeros({B, K});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < D; ++j) s += w.W(k, j) * features(i, j);
      u(i, k) = s;
    }
  return u;
}

std::vector<double> logits(const HeadWeights& w, const VisionParams& p,
                           const std::vector<double>& x) {
  std::vector<double> feat = vision_forward(p, x);
  std::size_t d = feat.size();
  DenseArray f = DenseArray::from({1, d}, std::move(feat));
  return head_logits(w, f).data;
}

double energy(const VisionParams& theta, const TextParams& phi, const std::vector<double>& x,
              const TokenSeq& t) {
  std::vector<double> f = vision_forward(theta, x);
  std::vector<double> g = text_forward(phi, t);
  if (f.size() != g.size()) throw std::invalid_argument("energy: feature width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * g[i];
  return -s;
}

std::vector<double> text_logits(const VisionParams& theta, const TextParams& phi,
                                const std::vector<double>& x, const std::vector<TokenSeq>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("text_logits: empty token set");
  DenseArray g = text_forward(phi, tokens);
  std::vector<double> feat = vision_forward(theta, x);
  std::size_t d = feat.size();
  DenseArray f = DenseArray::from({1, d}, std::move(feat));
  return text_logits_batch(f, g).data;
}

DenseArray text_logits_batch(const DenseArray& features, const DenseArray& text_features) {
  if (features.cols() != text_features.cols())
    throw std::invalid_argument("text_logits_batch: feature width mismatch");
  std::size_t B = features.rows(), M = text_features.rows(), D = features.cols();
  DenseArray v = DenseArray::zeros({B, M});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t m = 0; m < M; ++m) {
      double s = 0.0;
      for (std::size_t j = 0; j < D; ++j) s += features(i, j) * text_features(m, j);
      v(i, m) = s;
    }
  return v;
}

ParamSet pack_trainable(const VisionParams& v, const HeadWeights& w) {
  ParamSet p;
  p["vision.W1"] = v.W1;
  p["vision.b1"] = v.b1;
  p["vision.W2"] = v.W2;
  p["vision.b2"] = v.b2;
  p["head.W"] = w.W;
  return p;
}

void unpack_trainable(const ParamSet& p, VisionParams& v, HeadWeights& w) {
  v.W1 = p.at("vision.W1");
  v.b1 = p.at("vision.b1");
  v.W2 = p.at("vision.W2");
  v.b2 = p.at("vision.b2");
  w.W = p.at("head.W");
}

ParamSet pack_pretrained(const VisionParams& v, const TextParams& t) {
  ParamSet p;
  p["vision.W1"] = v.W1;
  p["vision.b1"] = v.b1;
  p["vision.W2"] = v.W2;
  p["vision.b2"] = v.b2;
  p["text.Emb"] = t.Emb;
  p["text.Wp"] = t.Wp;
  p["text.bp"] = t.bp;
  return p;
}

void unpack_pretrained(const ParamSet& p, VisionParams& v, TextParams& t) {
  v.W1 = p.at("vision.W1");
  v.b1 = p.at("vision.b1");
  v.W2 = p.at("vision.W2");
  v.b2 = p.at("vision.b2");
  t.Emb = p.at("text.Emb");
  t.Wp = p.at("text.Wp");
  t.bp = p.at("text.bp");
}

}  // namespace rflab
