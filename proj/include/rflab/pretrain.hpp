#pragma once

#include <cstdint>
#include <vector>

#include "rflab/data.hpp"
#include "rflab/model.hpp"

namespace rflab {

struct PretrainConfig {
  std::size_t steps = 350;
  std::size_t batch = 64;
  double lr = 1e-3;
  double temperature = 0.5;
  std::uint64_t seed = 0;
};

struct PretrainedModel {
  ModelConfig arch;
  VisionParams vision;
  TextParams text;
};

// Symmetric contrastive loss over a batch of matched (image, text) pairs:
// S_ij = <F(x_i), G(t_j)> / tau, loss = mean of the row-wise and column-wise
// cross-entropies against the diagonal. Gradients accumulate into the
// optional output holders.
double info_nce_loss(const VisionParams& vision, const TextParams& text, const DenseArray& x,
                     const std::vector<TokenSeq>& texts, double tau,
                     VisionParams* vision_grad = nullptr, TextParams* text_grad = nullptr);

PretrainedModel contrastive_pretrain(const Benchmark& bench, const ModelConfig& arch,
                                     const PretrainConfig& cfg,
                                     std::vector<double>* loss_trace = nullptr);

}  // namespace rflab
