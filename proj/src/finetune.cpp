#include "rflab/finetune.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rflab/metrics.hpp"
#include "rflab/numerics.hpp"

namespace rflab {

Method parse_method(const std::string& name) {
  std::string base = name;
  bool ema = false;
  if (base == "EMA") return Method{Variant::FT, true};
  const std::string suffix = "+EMA";
  if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
    ema = true;
    base = base.substr(0, base.size() - suffix.size());
  }
  Variant v;
  if (base == "FT") v = Variant::FT;
  else if (base == "ScratchFT") v = Variant::ScratchFT;
  else if (base == "LPFT") v = Variant::LPFT;
  else if (base == "L2SP") v = Variant::L2SP;
  else if (base == "KD") v = Variant::KD;
  else if (base == "CARFT") v = Variant::CARFT;
  else if (base == "CARFT_MSE") v = Variant::CARFT_MSE;
  else if (base == "LIPSUM") v = Variant::LIPSUM;
  else if (base == "LIPSUM_KLD") v = Variant::LIPSUM_KLD;
  else if (base == "FEATKD") v = Variant::FEATKD;
  else throw std::invalid_argument("unknown method: " + name);
  return Method{v, ema};
}

std::string method_name(const Method& m) {
  std::string base;
  switch (m.variant) {
    case Variant::FT: base = "FT"; break;
    case Variant::ScratchFT: base = "ScratchFT"; break;
    case Variant::LPFT: base = "LPFT"; break;
    case Variant::L2SP: base = "L2SP"; break;
    case Variant::KD: base = "KD"; break;
    case Variant::CARFT: base = "CARFT"; break;
    case Variant::CARFT_MSE: base = "CARFT_MSE"; break;
    case Variant::LIPSUM: base = "LIPSUM"; break;
    case Variant::LIPSUM_KLD: base = "LIPSUM_KLD"; break;
    case Variant::FEATKD: base = "FEATKD"; break;
  }
  if (!m.ema) return base;
  return m.variant == Variant::FT ? "EMA" : base + "+EMA";
}

double default_lambda(Variant v) {
  switch (v) {
    case Variant::L2SP: return 3e-4;
    case Variant::KD: return 0.1;
    case Variant::CARFT:
    case Variant::CARFT_MSE: return 1.0;
    case Variant::LIPSUM:
    case Variant::LIPSUM_KLD: return 1.0;
    case Variant::FEATKD: return 1.0;
    default: return 0.0;
  }
}

double lr_schedule(std::size_t s, std::size_t total, double peak, double warmup_frac) {
  if (s > total) throw std::invalid_argument("lr_schedule: step beyond total");
  std::size_t warm = static_cast<std::size_t>(std::ceil(warmup_frac * double(total)));
  if (s < warm) return peak * double(s) / double(warm);
  if (total == warm) return peak;
  double t = double(s - warm) / double(total - warm);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double ce_loss(const VisionParams& vision, const HeadWeights& head, const DenseArray& x,
               const std::vector<int>& labels, VisionParams* vision_grad, DenseArray* head_grad) {
  std::size_t B = x.rows();
  if (labels.size() != B) throw std::invalid_argument("ce_loss: label count mismatch");
  VisionCache cache;
  DenseArray f = vision_forward(vision, x, vision_grad ? &cache : nullptr);
  DenseArray u = head_logits(head, f);
  std::size_t K = u.cols(), D = f.cols();

  double loss = 0.0;
  DenseArray du = DenseArray::zeros({B, K});
  std::vector<double> row(K);
  for (std::size_t i = 0; i < B; ++i) {
    int y = labels[i];
    if (y < 0 || std::size_t(y) >= K) throw std::invalid_argument("ce_loss: label out of range");
    for (std::size_t k = 0; k < K; ++k) row[k] = u(i, k);
    loss += cross_entropy(row, std::size_t(y)) / double(B);
    std::vector<double> p = softmax(row);
    for (std::size_t k = 0; k < K; ++k)
      du(i, k) = (p[k] - (std::size_t(y) == k ? 1.0 : 0.0)) / double(B);
  }

  if (head_grad) {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t i = 0; i < B; ++i) s += du(i, k) * f(i, d);
        (*head_grad)(k, d) += s;
      }
  }
  if (vision_grad) {
    DenseArray gf = DenseArray::zeros({B, D});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += du(i, k) * head.W(k, d);
        gf(i, d) = s;
      }
    vision_backward(vision, cache, gf, *vision_grad);
  }
  return loss;
}

double reg_l2sp(const ParamSet& params, const ParamSet& anchor, ParamSet* grad) {
  require_same_structure(params, anchor);
  double value = 0.0;
  auto ip = params.begin();
  auto ia = anchor.begin();
  for (; ip != params.end(); ++ip, ++ia) {
    const auto& p = ip->second.data;
    const auto& a = ia->second.data;
    double* g = grad ? grad->at(ip->first).data.data() : nullptr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double d = p[i] - a[i];
      value += 0.5 * d * d;
      if (g) g[i] += d;
    }
  }
  return value;
}

double reg_kd(const VisionParams& vision, const HeadWeights& head, const VisionParams& vision0,
              const HeadWeights& head0, const DenseArray& x, VisionParams* vision_grad,
              DenseArray* head_grad) {
  std::size_t B = x.rows();
  DenseArray f0 = vision_forward(vision0, x);
  DenseArray u0 = head_logits(head0, f0);
  VisionCache cache;
  DenseArray f = vision_forward(vision, x, vision_grad ? &cache : nullptr);
  DenseArray u = head_logits(head, f);
  std::size_t K = u.cols(), D = f.cols();

  double value = 0.0;
  DenseArray du = DenseArray::zeros({B, K});
  std::vector<double> srow(K), trow(K);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      srow[k] = u(i, k);
      trow[k] = u0(i, k);
    }
    std::vector<double> teacher = softmax(trow);
    std::vector<double> lq = log_softmax(srow);
    std::vector<double> q = softmax(srow);
    for (std::size_t k = 0; k < K; ++k) {
      value -= teacher[k] * lq[k] / double(B);
      du(i, k) = (q[k] - teacher[k]) / double(B);
    }
  }

  if (head_grad) {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t i = 0; i < B; ++i) s += du(i, k) * f(i, d);
        (*head_grad)(k, d) += s;
      }
  }
  if (vision_grad) {
    DenseArray gf = DenseArray::zeros({B, D});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += du(i, k) * head.W(k, d);
        gf(i, d) = s;
      }
    vision_backward(vision, cache, gf, *vision_grad);
  }
  return value;
}

// Shared tail for the context/random-text regularizers: given per-example
// logit rows under the current and frozen encoders and the [M, D] feature
// matrix they were scored against, compute the penalty and push its gradient
// back through the vision encoder.
static double logit_match_penalty(const DenseArray& c, const DenseArray& c0,
                                  const DenseArray& score_feats, double tau, bool mse_variant,
                                  const VisionParams& vision, const VisionCache& cache,
                                  VisionParams* vision_grad) {
  std::size_t B = c.rows(), M = c.cols(), D = score_feats.cols();
  double value = 0.0;
  DenseArray dc = DenseArray::zeros({B, M});
  std::vector<double> cur(M), ref(M);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t m = 0; m < M; ++m) {
      cur[m] = c(i, m);
      ref[m] = c0(i, m);
    }
    if (mse_variant) {
      value += mse_half(cur, ref, M) / double(B);
      for (std::size_t m = 0; m < M; ++m)
        dc(i, m) = (cur[m] - ref[m]) / (double(M) * double(B));
    } else {
      value += kld_tempered(cur, ref, tau) / double(B);
      std::vector<double> scur(M), sref(M);
      for (std::size_t m = 0; m < M; ++m) {
        scur[m] = cur[m] / tau;
        sref[m] = ref[m] / tau;
      }
      std::vector<double> q = softmax(scur);
      std::vector<double> p = softmax(sref);
      for (std::size_t m = 0; m < M; ++m) dc(i, m) = tau * (q[m] - p[m]) / double(B);
    }
  }
  if (vision_grad) {
    DenseArray gf = DenseArray::zeros({B, D});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t m = 0; m < M; ++m) s += dc(i, m) * score_feats(m, d);
        gf(i, d) = s;
      }
    vision_backward(vision, cache, gf, *vision_grad);
  }
  return value;
}

double reg_carft(const VisionParams& vision, const VisionParams& vision0, const HeadWeights& ctx_head,
                 const DenseArray& x, double tau, bool mse_variant, VisionParams* vision_grad) {
  if (!(tau > 0.0)) throw std::invalid_argument("reg_carft: tau must be positive");
  DenseArray f0 = vision_forward(vision0, x);
  DenseArray c0 = head_logits(ctx_head, f0);
  VisionCache cache;
  DenseArray f = vision_forward(vision, x, vision_grad ? &cache : nullptr);
  DenseArray c = head_logits(ctx_head, f);
  return logit_match_penalty(c, c0, ctx_head.W, tau, mse_variant, vision, cache, vision_grad);
}

double reg_lipsum_fixed(const VisionParams& vision, const VisionParams& vision0,
                        const TextParams& text, const DenseArray& x,
                        const std::vector<TokenSeq>& tokens, bool kld_variant,
                        VisionParams* vision_grad) {
  DenseArray g = text_forward(text, tokens);
  DenseArray f0 = vision_forward(vision0, x);
  DenseArray v0 = text_logits_batch(f0, g);
  VisionCache cache;
  DenseArray f = vision_forward(vision, x, vision_grad ? &cache : nullptr);
  DenseArray v = text_logits_batch(f, g);
  return logit_match_penalty(v, v0, g, 1.0, !kld_variant, vision, cache, vision_grad);
}

double reg_lipsum(const VisionParams& vision, const VisionParams& vision0, const TextParams& text,
                  const DenseArray& x, Rng& rng, std::size_t m, std::size_t l, bool kld_variant,
                  VisionParams* vision_grad) {
  if (m == 0) throw std::invalid_argument("reg_lipsum: need at least one token sequence");
  std::vector<TokenSeq> tokens = sample_random_tokens(rng, m, l, text.Emb.rows());
  return reg_lipsum_fixed(vision, vision0, text, x, tokens, kld_variant, vision_grad);
}

double reg_featkd(const VisionParams& vision, const VisionParams& vision0, const DenseArray& x,
                  VisionParams* vision_grad) {
  std::size_t B = x.rows();
  DenseArray f0 = vision_forward(vision0, x);
  VisionCache cache;
  DenseArray f = vision_forward(vision, x, vision_grad ? &cache : nullptr);
  double value = 0.0;
  DenseArray gf = DenseArray::zeros(f.shape);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    double d = f.data[i] - f0.data[i];
    value += d * d / double(B);
    gf.data[i] = 2.0 * d / double(B);
  }
  if (vision_grad) vision_backward(vision, cache, gf, *vision_grad);
  return value;
}

void ema_update(ParamSet& ema, const ParamSet& current, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema_update: decay outside [0,1]");
  require_same_structure(ema, current);
  auto ie = ema.begin();
  auto ic = current.begin();
  for (; ie != ema.end(); ++ie, ++ic)
    for (std::size_t i = 0; i < ie->second.data.size(); ++i)
      ie->second.data[i] = decay * ie->second.data[i] + (1.0 - decay) * ic->second.data[i];
}

HeadWeights linear_probe(const PretrainedModel& pre, const Dataset& train, std::size_t steps,
                         double lr) {
  if (steps < 1) throw std::invalid_argument("linear_probe: need at least one step");
  std::size_t n = train.x.rows();
  int max_label = 0;
  for (int y : train.labels) max_label = y > max_label ? y : max_label;
  std::size_t K = std::size_t(max_label) + 1;

  DenseArray f = vision_forward(pre.vision, train.x);
  std::size_t D = f.cols();
  HeadWeights head{DenseArray::zeros({K, D})};
  std::vector<double> row(K);
  for (std::size_t s = 0; s < steps; ++s) {
    DenseArray u = head_logits(head, f);
    DenseArray gw = DenseArray::zeros({K, D});
    double loss = 0.0;
    try {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < K; ++k) row[k] = u(i, k);
        loss += cross_entropy(row, std::size_t(train.labels[i])) / double(n);
        std::vector<double> p = softmax(row);
        for (std::size_t k = 0; k < K; ++k) {
          double d = (p[k] - (std::size_t(train.labels[i]) == k ? 1.0 : 0.0)) / double(n);
          for (std::size_t j = 0; j < D; ++j) gw(k, j) += d * f(i, j);
        }
      }
    } catch (const std::invalid_argument& e) {
      if (s == 0) throw;
      throw std::runtime_error("linear_probe: non-finite loss at step " + std::to_string(s) + " (" +
                               e.what() + ")");
    }
    if (!std::isfinite(loss))
      throw std::runtime_error("linear_probe: non-finite loss at step " + std::to_string(s));
    for (std::size_t i = 0; i < head.W.data.size(); ++i) head.W.data[i] -= lr * gw.data[i];
  }
  return head;
}

HeadWeights init_head(HeadInit strategy, const PretrainedModel& pre,
                      const std::vector<TokenSeq>& class_texts, const Dataset& train,
                      std::size_t probe_steps, double probe_lr) {
  switch (strategy) {
    case HeadInit::Zero:
      return HeadWeights{DenseArray::zeros({class_texts.size(), pre.arch.embed_dim})};
    case HeadInit::ZeroShot:
      return zero_shot_head(pre.text, class_texts);
    case HeadInit::LinearProbe:
      return linear_probe(pre, train, probe_steps, probe_lr);
  }
  throw std::invalid_argument("init_head: unknown strategy");
}

namespace {

struct AdamState {
  std::vector<DenseArray> m, v;
  std::size_t t = 0;
};

void adam_step(std::vector<DenseArray*> params, const std::vector<const DenseArray*>& grads,
               AdamState& st, double lr) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.empty()) {
    for (DenseArray* p : params) {
      st.m.push_back(DenseArray::zeros(p->shape));
      st.v.push_back(DenseArray::zeros(p->shape));
    }
  }
  st.t += 1;
  double c1 = 1.0 - std::pow(b1, double(st.t));
  double c2 = 1.0 - std::pow(b2, double(st.t));
  for (std::size_t a = 0; a < params.size(); ++a) {
    DenseArray& p = *params[a];
    const DenseArray& g = *grads[a];
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      double gi = g.data[i];
      st.m[a].data[i] = b1 * st.m[a].data[i] + (1.0 - b1) * gi;
      st.v[a].data[i] = b2 * st.v[a].data[i] + (1.0 - b2) * gi * gi;
      double mh = st.m[a].data[i] / c1;
      double vh = st.v[a].data[i] / c2;
      p.data[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

void add_scaled_vision(VisionParams& dst, double alpha, const VisionParams& src) {
  for (std::size_t i = 0; i < dst.W1.data.size(); ++i) dst.W1.data[i] += alpha * src.W1.data[i];
  for (std::size_t i = 0; i < dst.b1.data.size(); ++i) dst.b1.data[i] += alpha * src.b1.data[i];
  for (std::size_t i = 0; i < dst.W2.data.size(); ++i) dst.W2.data[i] += alpha * src.W2.data[i];
  for (std::size_t i = 0; i < dst.b2.data.size(); ++i) dst.b2.data[i] += alpha * src.b2.data[i];
}

}  // namespace

TrainedModel finetune(const PretrainedModel& pre, const Benchmark& bench, const Method& method,
                      const FinetuneConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("finetune: steps must be at least 1");
  if (cfg.batch < 1) throw std::invalid_argument("finetune: batch must be at least 1");
  if (!(cfg.warmup_frac >= 0.0 && cfg.warmup_frac < 1.0))
    throw std::invalid_argument("finetune: warmup_frac outside [0,1)");
  if (cfg.eval_every < 1) throw std::invalid_argument("finetune: eval_every must be at least 1");
  if (!(cfg.kld_tau > 0.0)) throw std::invalid_argument("finetune: kld_tau must be positive");
  if (!(cfg.ema_decay >= 0.0 && cfg.ema_decay <= 1.0))
    throw std::invalid_argument("finetune: ema_decay outside [0,1]");

  std::size_t K = bench.spec.classes;
  std::vector<TokenSeq> class_texts;
  class_texts.reserve(K);
  for (std::size_t k = 0; k < K; ++k)
    class_texts.push_back(class_token_seq(k, pre.arch.token_len, pre.arch.vocab));

  HeadWeights w0 = zero_shot_head(pre.text, class_texts);
  HeadInit strategy = HeadInit::ZeroShot;
  if (method.variant == Variant::ScratchFT) strategy = HeadInit::Zero;
  if (method.variant == Variant::LPFT) strategy = HeadInit::LinearProbe;
  HeadWeights head =
      init_head(strategy, pre, class_texts, bench.ref_train, cfg.probe_steps, cfg.probe_lr);

  VisionParams vision = pre.vision;
  const VisionParams& vision0 = pre.vision;
  const HeadWeights head_anchor = head;  // initial trainable point, the anchor for L2SP and KD

  HeadWeights ctx_head;
  bool uses_ctx = method.variant == Variant::CARFT || method.variant == Variant::CARFT_MSE;
  if (uses_ctx) {
    if (K + cfg.context_texts > pre.arch.vocab)
      throw std::invalid_argument("finetune: context prompts exceed vocabulary");
    std::vector<TokenSeq> ctx_texts;
    for (std::size_t m = 0; m < cfg.context_texts; ++m)
      ctx_texts.push_back(class_token_seq(K + m, pre.arch.token_len, pre.arch.vocab));
    ctx_head = zero_shot_head(pre.text, ctx_texts);
  }

  double lambda = cfg.lambda < 0.0 ? default_lambda(method.variant) : cfg.lambda;

  FinetuneConfig resolved = cfg;
  resolved.lambda = lambda;

  ParamSet ema;
  if (method.ema) ema = pack_trainable(vision, head);

  Rng batch_rng = Rng::stream(cfg.seed, "finetune:batches");
  Rng token_rng = Rng::stream(cfg.token_seed.value_or(cfg.seed), "finetune:tokens");

  std::size_t n = bench.ref_train.x.rows();
  DenseArray xb = DenseArray::zeros({cfg.batch, pre.arch.input_dim});
  std::vector<int> yb(cfg.batch);

  AdamState adam;
  TrainedModel out;
  out.method = method;
  out.config = resolved;
  out.zero_shot_ref = pack_trainable(pre.vision, w0);

  double best_acc = -1.0;

  for (std::size_t s = 0; s < cfg.steps; ++s) {
    double lr = lr_schedule(s, cfg.steps, cfg.peak_lr, cfg.warmup_frac);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      std::size_t idx = batch_rng.below(n);
      for (std::size_t j = 0; j < pre.arch.input_dim; ++j) xb(b, j) = bench.ref_train.x(idx, j);
      yb[b] = bench.ref_train.labels[idx];
    }

    VisionParams gv = zeros_like(vision);
    DenseArray gw = DenseArray::zeros(head.W.shape);
    double ce = 0.0, reg = 0.0;
    // Shapes are fixed for the whole loop, so once training is underway an
    // argument error from the numeric layer means values overflowed: report
    // it as divergence at this step rather than a usage error.
    try {
      ce = ce_loss(vision, head, xb, yb, &gv, &gw);
      if (method.variant != Variant::FT && method.variant != Variant::ScratchFT &&
          method.variant != Variant::LPFT) {
        VisionParams gvr = zeros_like(vision);
        DenseArray gwr = DenseArray::zeros(head.W.shape);
        switch (method.variant) {
          case Variant::L2SP: {
            ParamSet params = pack_trainable(vision, head);
            ParamSet anchor = pack_trainable(vision0, head_anchor);
            ParamSet pg = zeros_like(params);
            reg = reg_l2sp(params, anchor, &pg);
            HeadWeights hw;
            unpack_trainable(pg, gvr, hw);
            gwr = hw.W;
            break;
          }
          case Variant::KD:
            reg = reg_kd(vision, head, vision0, head_anchor, xb, &gvr, &gwr);
            break;
          case Variant::CARFT:
            reg = reg_carft(vision, vision0, ctx_head, xb, cfg.kld_tau, false, &gvr);
            break;
          case Variant::CARFT_MSE:
            reg = reg_carft(vision, vision0, ctx_head, xb, cfg.kld_tau, true, &gvr);
            break;
          case Variant::LIPSUM:
            reg = reg_lipsum(vision, vision0, pre.text, xb, token_rng, cfg.guide_tokens,
                             cfg.guide_len, false, &gvr);
            break;
          case Variant::LIPSUM_KLD:
            reg = reg_lipsum(vision, vision0, pre.text, xb, token_rng, cfg.guide_tokens,
                             cfg.guide_len, true, &gvr);
            break;
          case Variant::FEATKD:
            reg = reg_featkd(vision, vision0, xb, &gvr);
            break;
          default:
            break;
        }
        add_scaled_vision(gv, lambda, gvr);
        for (std::size_t i = 0; i < gw.data.size(); ++i) gw.data[i] += lambda * gwr.data[i];
      }
    } catch (const std::invalid_argument& e) {
      if (s == 0) throw;
      throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(s) + " (" +
                               e.what() + ")");
    }

    if (!std::isfinite(ce + lambda * reg))
      throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(s));

    adam_step({&vision.W1, &vision.b1, &vision.W2, &vision.b2, &head.W},
              {&gv.W1, &gv.b1, &gv.W2, &gv.b2, &gw}, adam, lr);

    if (method.ema) ema_update(ema, pack_trainable(vision, head), cfg.ema_decay);

    TraceRow row{s + 1, lr, ce, reg, false, 0.0};
    if ((s + 1) % cfg.eval_every == 0 || s + 1 == cfg.steps) {
      ParamSet current = method.ema ? ema : pack_trainable(vision, head);
      VisionParams ev;
      HeadWeights ew;
      unpack_trainable(current, ev, ew);
      DenseArray val_logits = head_logits(ew, vision_forward(ev, bench.ref_val.x));
      double acc = accuracy(val_logits, bench.ref_val.labels);
      row.evaluated = true;
      row.val_acc = acc;
      if (acc > best_acc) {
        best_acc = acc;
        out.params = std::move(current);
        out.selected_step = s + 1;
      }
    }
    out.trace.push_back(row);
  }
  return out;
}

}  // namespace rflab
