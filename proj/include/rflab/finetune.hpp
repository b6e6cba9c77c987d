#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rflab/data.hpp"
#include "rflab/model.hpp"
#include "rflab/pretrain.hpp"

namespace rflab {

enum class Variant {
  FT,
  ScratchFT,
  LPFT,
  L2SP,
  KD,
  CARFT,
  CARFT_MSE,
  LIPSUM,
  LIPSUM_KLD,
  FEATKD,
};

struct Method {
  Variant variant = Variant::FT;
  bool ema = false;
};

// Accepts the variant names above, the shorthand "EMA" (plain fine-tuning
// with EMA tracking), and a "+EMA" suffix on any variant.
Method parse_method(const std::string& name);
std::string method_name(const Method& m);
double default_lambda(Variant v);

struct FinetuneConfig {
  std::size_t steps = 500;
  std::size_t batch = 64;
  double peak_lr = 1e-3;
  double warmup_frac = 0.1;
  std::size_t eval_every = 50;
  double lambda = -1.0;  // negative means: use the variant default
  double kld_tau = 1.0;
  double ema_decay = 0.9995;
  std::size_t guide_tokens = 80;   // M random sequences per iteration
  std::size_t guide_len = 8;       // L tokens per sequence
  std::size_t context_texts = 16;  // fixed context prompts for CAR-FT
  std::size_t probe_steps = 500;
  double probe_lr = 0.5;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> token_seed;  // defaults to seed
};

struct TraceRow {
  std::size_t step;  // 1-based count of completed steps
  double lr;
  double loss_ce;
  double loss_reg;
  bool evaluated = false;
  double val_acc = 0.0;
};

struct TrainedModel {
  ParamSet params;         // selected checkpoint (vision + head)
  ParamSet zero_shot_ref;  // theta_0 with the zero-shot head
  Method method;
  FinetuneConfig config;
  std::size_t selected_step = 0;
  std::vector<TraceRow> trace;
};

// Cosine schedule with linear warmup over ceil(w*T) steps; s counts completed
// steps, so s=0 is the first update.
double lr_schedule(std::size_t s, std::size_t total, double peak, double warmup_frac);

enum class HeadInit { Zero, LinearProbe, ZeroShot };

HeadWeights init_head(HeadInit strategy, const PretrainedModel& pre,
                      const std::vector<TokenSeq>& class_texts, const Dataset& train,
                      std::size_t probe_steps, double probe_lr);

// Full-batch gradient descent on cross-entropy over frozen features.
HeadWeights linear_probe(const PretrainedModel& pre, const Dataset& train, std::size_t steps,
                         double lr);

// Mean cross-entropy over a batch; gradients (scaled by 1/B) accumulate into
// the optional holders.
double ce_loss(const VisionParams& vision, const HeadWeights& head, const DenseArray& x,
               const std::vector<int>& labels, VisionParams* vision_grad = nullptr,
               DenseArray* head_grad = nullptr);

// Regularizers. Each returns the penalty value before the lambda weighting
// and accumulates its gradient into the given holders.
double reg_l2sp(const ParamSet& params, const ParamSet& anchor, ParamSet* grad = nullptr);

double reg_kd(const VisionParams& vision, const HeadWeights& head, const VisionParams& vision0,
              const HeadWeights& head0, const DenseArray& x, VisionParams* vision_grad = nullptr,
              DenseArray* head_grad = nullptr);

double reg_carft(const VisionParams& vision, const VisionParams& vision0, const HeadWeights& ctx_head,
                 const DenseArray& x, double tau, bool mse_variant,
                 VisionParams* vision_grad = nullptr);

// Shared-token core of the random-text regularizer; reg_lipsum draws fresh
// sequences from the rng and delegates here.
double reg_lipsum_fixed(const VisionParams& vision, const VisionParams& vision0,
                        const TextParams& text, const DenseArray& x,
                        const std::vector<TokenSeq>& tokens, bool kld_variant,
                        VisionParams* vision_grad = nullptr);
double reg_lipsum(const VisionParams& vision, const VisionParams& vision0, const TextParams& text,
                  const DenseArray& x, Rng& rng, std::size_t m, std::size_t l, bool kld_variant,
                  VisionParams* vision_grad = nullptr);

double reg_featkd(const VisionParams& vision, const VisionParams& vision0, const DenseArray& x,
                  VisionParams* vision_grad = nullptr);

void ema_update(ParamSet& ema, const ParamSet& current, double decay);

TrainedModel finetune(const PretrainedModel& pre, const Benchmark& bench, const Method& method,
                      const FinetuneConfig& cfg);

}  // namespace rflab
