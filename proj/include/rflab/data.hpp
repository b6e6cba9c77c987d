#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "rflab/array.hpp"
#include "rflab/model.hpp"
#include "rflab/rng.hpp"

namespace rflab {

struct BenchmarkSpec {
  std::size_t classes = 10;
  std::size_t input_dim = 32;
  std::size_t shift_domains = 4;
  std::vector<double> angle_scales{0.25, 0.5, 0.75, 1.0};
  std::vector<double> bias_scales{0.5, 1.0, 1.5, 2.0};
  double noise_sigma = 0.5;
  std::size_t n_pretrain = 4000;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test_per_domain = 1000;
  std::uint64_t seed = 0;
};

struct Dataset {
  DenseArray x;               // [n, d_in]
  std::vector<int> labels;    // class index per row
  std::vector<int> domains;   // 0 = reference, 1..S = shifted
};

struct Benchmark {
  BenchmarkSpec spec;
  DenseArray prototypes;               // [K, d_in]
  std::vector<DenseArray> rotations;   // S orthogonal maps [d_in, d_in]
  DenseArray shift_biases;             // [S, d_in]
  Dataset ref_train, ref_val, ref_test;
  std::vector<Dataset> shift_tests;    // one per shifted domain
  Dataset pretrain_inputs;             // mixed-domain inputs
  std::vector<TokenSeq> pretrain_texts;  // paired class prompts
};

// Deterministic class prompt: token j = (k*(j+1) + j) mod vocab. Distinct
// classes below the vocabulary size give distinct sequences.
TokenSeq class_token_seq(std::size_t k, std::size_t len, std::size_t vocab);

std::vector<TokenSeq> sample_random_tokens(Rng& rng, std::size_t count, std::size_t len,
                                           std::size_t vocab);

Benchmark make_benchmark(const BenchmarkSpec& spec, std::size_t vocab, std::size_t token_len);

// Matrix exponential of a square matrix by scaling and squaring; used for the
// rotation generators and exposed for tests.
DenseArray expm(const DenseArray& a);

void write_dataset_csv(std::ostream& out, const Dataset& ds);

}  // namespace rflab
