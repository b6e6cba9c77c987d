#pragma once

#include <cstdint>
#include <vector>

#include "rflab/array.hpp"
#include "rflab/rng.hpp"

namespace rflab {

using TokenSeq = std::vector<std::uint32_t>;

struct ModelConfig {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 16;   // shared representation space D
  std::size_t vocab = 64;
  std::size_t token_dim = 16;   // token embedding width
  std::size_t token_len = 8;
};

// Vision encoder F(x) = W2 * relu(W1 x + b1) + b2. Raw output, no
// normalization: the energy function is defined on plain inner products.
struct VisionParams {
  DenseArray W1, b1, W2, b2;
};

// Text encoder G(t) = Wp * meanpool(Emb[t_1..t_L]) + bp.
struct TextParams {
  DenseArray Emb, Wp, bp;
};

struct HeadWeights {
  DenseArray W;  // [K, D], row k is the class-k weight vector
};

VisionParams init_vision(const ModelConfig& cfg, Rng& rng);
TextParams init_text(const ModelConfig& cfg, Rng& rng);
VisionParams zeros_like(const VisionParams& p);
TextParams zeros_like(const TextParams& p);

struct VisionCache {
  DenseArray x;   // [B, d_in]
  DenseArray z1;  // [B, H] pre-activation
  DenseArray h;   // [B, H] post-relu
};

// Batch forward: x [B, d_in] -> features [B, D]. Pass a cache to enable the
// matching backward call.
DenseArray vision_forward(const VisionParams& p, const DenseArray& x, VisionCache* cache = nullptr);
std::vector<double> vision_forward(const VisionParams& p, const std::vector<double>& x);
void vision_backward(const VisionParams& p, const VisionCache& cache, const DenseArray& g_feat,
                     VisionParams& grad);

struct TextCache {
  std::vector<TokenSeq> seqs;
  DenseArray pooled;  // [n, token_dim]
};

DenseArray text_forward(const TextParams& p, const std::vector<TokenSeq>& seqs,
                        TextCache* cache = nullptr);
std::vector<double> text_forward(const TextParams& p, const TokenSeq& t);
void text_backward(const TextParams& p, const TextCache& cache, const DenseArray& g_feat,
                   TextParams& grad);

// Head rows are the text features of the class prompts, taken verbatim.
HeadWeights zero_shot_head(const TextParams& p, const std::vector<TokenSeq>& class_texts);

// u = W F(x); batch form takes precomputed features.
DenseArray head_logits(const HeadWeights& w, const DenseArray& features);
std::vector<double> logits(const HeadWeights& w, const VisionParams& p, const std::vector<double>& x);

double energy(const VisionParams& theta, const TextParams& phi, const std::vector<double>& x,
              const TokenSeq& t);

// v[m] = <G(t_m), F(x)>; equals -energy per entry.
std::vector<double> text_logits(const VisionParams& theta, const TextParams& phi,
                                const std::vector<double>& x, const std::vector<TokenSeq>& tokens);

// Batch variant against precomputed text features G [M, D]: out[i][m] = <G_m, F_i>.
DenseArray text_logits_batch(const DenseArray& features, const DenseArray& text_features);

// The trainable set during fine-tuning: vision params plus head.
ParamSet pack_trainable(const VisionParams& v, const HeadWeights& w);
void unpack_trainable(const ParamSet& p, VisionParams& v, HeadWeights& w);

// Vision plus text, as persisted after pre-training.
ParamSet pack_pretrained(const VisionParams& v, const TextParams& t);
void unpack_pretrained(const ParamSet& p, VisionParams& v, TextParams& t);

}  // namespace rflab
