#include "rflab/data.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "rflab/csv.hpp"

namespace rflab {

TokenSeq class_token_seq(std::size_t k, std::size_t len, std::size_t vocab) {
  if (vocab == 0 || len == 0) throw std::invalid_argument("class_token_seq: empty vocab or length");
  if (k >= vocab) throw std::invalid_argument("class_token_seq: class index out of range");
  TokenSeq t(len);
  for (std::size_t j = 0; j < len; ++j)
    t[j] = static_cast<std::uint32_t>((k * (j + 1) + j) % vocab);
  return t;
}

std::vector<TokenSeq> sample_random_tokens(Rng& rng, std::size_t count, std::size_t len,
                                           std::size_t vocab) {
  if (count == 0) throw std::invalid_argument("sample_random_tokens: count must be positive");
  if (vocab == 0 || len == 0)
    throw std::invalid_argument("sample_random_tokens: empty vocab or length");
  std::vector<TokenSeq> out(count);
  for (TokenSeq& t : out) {
    t.resize(len);
    for (std::uint32_t& id : t) id = static_cast<std::uint32_t>(rng.below(vocab));
  }
  return out;
}

static double fro_norm(const DenseArray& a) { return std::sqrt(layer_sqnorm(a)); }

static DenseArray matmul_sq(const DenseArray& a, const DenseArray& b) {
  std::size_t n = a.rows();
  DenseArray c = DenseArray::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      double v = a(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += v * b(k, j);
    }
  return c;
}

DenseArray expm(const DenseArray& a) {
  if (a.shape.size() != 2 || a.rows() != a.cols()) throw std::invalid_argument("expm: not square");
  std::size_t n = a.rows();
  DenseArray eye = DenseArray::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
  double norm = fro_norm(a);
  if (norm == 0.0) return eye;

  int squarings = 0;
  double scaled_norm = norm;
  while (scaled_norm > 0.25) {
    scaled_norm /= 2.0;
    ++squarings;
  }
  DenseArray as = a;
  for (double& x : as.data) x /= std::pow(2.0, squarings);

  DenseArray result = eye;
  DenseArray term = eye;
  for (int k = 1; k <= 32; ++k) {
    term = matmul_sq(term, as);
    for (double& x : term.data) x /= double(k);
    for (std::size_t i = 0; i < result.data.size(); ++i) result.data[i] += term.data[i];
    if (fro_norm(term) < 1e-18 * fro_norm(result)) break;
  }
  for (int s = 0; s < squarings; ++s) result = matmul_sq(result, result);
  return result;
}

static Dataset draw_split(const Benchmark& bench, std::size_t n, int domain, Rng& rng) {
  const BenchmarkSpec& spec = bench.spec;
  std::size_t d = spec.input_dim, K = spec.classes;
  Dataset ds;
  ds.x = DenseArray::zeros({n, d});
  ds.labels.resize(n);
  ds.domains.assign(n, domain);
  std::vector<double> raw(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = i % K;  // balanced labels by construction
    ds.labels[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < d; ++j)
      raw[j] = bench.prototypes(k, j) + spec.noise_sigma * rng.normal();
    if (domain == 0) {
      for (std::size_t j = 0; j < d; ++j) ds.x(i, j) = raw[j];
    } else {
      const DenseArray& R = bench.rotations[domain - 1];
      for (std::size_t j = 0; j < d; ++j) {
        double s = bench.shift_biases(domain - 1, j);
        for (std::size_t m = 0; m < d; ++m) s += R(j, m) * raw[m];
        ds.x(i, j) = s;
      }
    }
  }
  return ds;
}

Benchmark make_benchmark(const BenchmarkSpec& spec, std::size_t vocab, std::size_t token_len) {
  if (spec.classes < 2) throw std::invalid_argument("make_benchmark: need at least 2 classes");
  if (spec.shift_domains < 1) throw std::invalid_argument("make_benchmark: need at least 1 shift domain");
  if (!(spec.noise_sigma > 0.0)) throw std::invalid_argument("make_benchmark: noise_sigma must be positive");
  if (spec.input_dim == 0) throw std::invalid_argument("make_benchmark: input_dim must be positive");
  if (spec.n_pretrain == 0 || spec.n_train == 0 || spec.n_val == 0 || spec.n_test_per_domain == 0)
    throw std::invalid_argument("make_benchmark: split sizes must be positive");
  if (spec.angle_scales.size() != spec.shift_domains)
    throw std::invalid_argument("make_benchmark: angle_scales must have one entry per shift domain");
  if (spec.bias_scales.size() != spec.shift_domains)
    throw std::invalid_argument("make_benchmark: bias_scales must have one entry per shift domain");
  for (double a : spec.angle_scales)
    if (!(a >= 0.0)) throw std::invalid_argument("make_benchmark: angle scale must be non-negative");
  for (double b : spec.bias_scales)
    if (!(b >= 0.0)) throw std::invalid_argument("make_benchmark: bias scale must be non-negative");
  if (spec.classes > vocab)
    throw std::invalid_argument("make_benchmark: class count exceeds vocabulary");

  Benchmark bench;
  bench.spec = spec;
  std::size_t d = spec.input_dim, K = spec.classes, S = spec.shift_domains;

  Rng proto_rng = Rng::stream(spec.seed, "prototypes");
  bench.prototypes = DenseArray::zeros({K, d});
  for (double& x : bench.prototypes.data) x = 3.0 * proto_rng.normal();

  // Each shifted domain gets an orthogonal map exp(angle * gain * skew) whose
  // strength grows with the angle scale, plus a Gaussian bias. The gain keeps
  // a unit angle scale meaningfully far from the identity at this dimension.
  const double rotation_gain = 3.0;
  Rng dom_rng = Rng::stream(spec.seed, "domains");
  bench.rotations.reserve(S);
  bench.shift_biases = DenseArray::zeros({S, d});
  for (std::size_t s = 0; s < S; ++s) {
    DenseArray b = DenseArray::zeros({d, d});
    for (double& x : b.data) x = dom_rng.normal();
    DenseArray skew = DenseArray::zeros({d, d});
    double scale = spec.angle_scales[s] * rotation_gain / (2.0 * std::sqrt(double(d)));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) skew(i, j) = scale * (b(i, j) - b(j, i));
    bench.rotations.push_back(expm(skew));
    for (std::size_t j = 0; j < d; ++j)
      bench.shift_biases(s, j) = spec.bias_scales[s] * dom_rng.normal();
  }

  {
    Rng r = Rng::stream(spec.seed, "split:ref_train");
    bench.ref_train = draw_split(bench, spec.n_train, 0, r);
  }
  {
    Rng r = Rng::stream(spec.seed, "split:ref_val");
    bench.ref_val = draw_split(bench, spec.n_val, 0, r);
  }
  {
    Rng r = Rng::stream(spec.seed, "split:ref_test");
    bench.ref_test = draw_split(bench, spec.n_test_per_domain, 0, r);
  }
  bench.shift_tests.reserve(S);
  for (std::size_t s = 0; s < S; ++s) {
    Rng r = Rng::stream(spec.seed, "split:shift_test:" + std::to_string(s));
    bench.shift_tests.push_back(draw_split(bench, spec.n_test_per_domain, int(s + 1), r));
  }

  // Pre-training pairs: inputs drawn from a random domain (reference included)
  // paired with the class prompt of their label.
  Rng pre_rng = Rng::stream(spec.seed, "pretrain");
  bench.pretrain_inputs.x = DenseArray::zeros({spec.n_pretrain, d});
  bench.pretrain_inputs.labels.resize(spec.n_pretrain);
  bench.pretrain_inputs.domains.resize(spec.n_pretrain);
  bench.pretrain_texts.resize(spec.n_pretrain);
  std::vector<double> raw(d);
  for (std::size_t i = 0; i < spec.n_pretrain; ++i) {
    std::size_t k = pre_rng.below(K);
    int dom = static_cast<int>(pre_rng.below(S + 1));
    bench.pretrain_inputs.labels[i] = static_cast<int>(k);
    bench.pretrain_inputs.domains[i] = dom;
    for (std::size_t j = 0; j < d; ++j)
      raw[j] = bench.prototypes(k, j) + spec.noise_sigma * pre_rng.normal();
    if (dom == 0) {
      for (std::size_t j = 0; j < d; ++j) bench.pretrain_inputs.x(i, j) = raw[j];
    } else {
      const DenseArray& R = bench.rotations[dom - 1];
      for (std::size_t j = 0; j < d; ++j) {
        double s = bench.shift_biases(dom - 1, j);
        for (std::size_t m = 0; m < d; ++m) s += R(j, m) * raw[m];
        bench.pretrain_inputs.x(i, j) = s;
      }
    }
    bench.pretrain_texts[i] = class_token_seq(k, token_len, vocab);
  }
  return bench;
}

void write_dataset_csv(std::ostream& out, const Dataset& ds) {
  std::size_t d = ds.x.cols();
  for (std::size_t j = 0; j < d; ++j) out << "x_" << j << ",";
  out << "label,domain\n";
  for (std::size_t i = 0; i < ds.x.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << fmt_double(ds.x(i, j)) << ",";
    out << ds.labels[i] << "," << ds.domains[i] << "\n";
  }
}

}  // namespace rflab
