#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rflab/metrics.hpp"
#include "rflab/numerics.hpp"
#include "rflab/rng.hpp"

using namespace rflab;

namespace {

DenseArray row_matrix(std::size_t n, std::size_t k, const std::vector<double>& flat) {
  return DenseArray::from({n, k}, flat);
}

// Plain per-example recomputation of each metric, kept deliberately naive.
double brute_accuracy(const DenseArray& logits, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < logits.cols(); ++k)
      if (logits(i, k) > logits(i, arg)) arg = k;
    if (static_cast<int>(arg) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

double brute_ece(const DenseArray& probs, const std::vector<int>& labels, std::size_t bins) {
  std::size_t n = probs.rows();
  std::vector<double> conf(n);
  std::vector<bool> hit(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < probs.cols(); ++k)
      if (probs(i, k) > probs(i, arg)) arg = k;
    conf[i] = probs(i, arg);
    hit[i] = static_cast<int>(arg) == labels[i];
  }
  double out = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    double acc = 0.0, avg = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      // same half-open convention as the library: bin b is (b/bins, (b+1)/bins]
      std::size_t home = static_cast<std::size_t>(std::ceil(conf[i] * double(bins))) - 1;
      if (home >= bins) home = bins - 1;
      if (home == b) {
        ++cnt;
        avg += conf[i];
        acc += hit[i] ? 1.0 : 0.0;
      }
    }
    if (cnt > 0) out += (static_cast<double>(cnt) / n) * std::fabs(acc / cnt - avg / cnt);
  }
  return out;
}

double brute_nll(const DenseArray& probs, const std::vector<int>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    s += -std::log(probs(i, static_cast<std::size_t>(labels[i])));
  return s / static_cast<double>(probs.rows());
}

double brute_pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= xs.size();
  my /= ys.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

DenseArray random_probs(Rng& rng, std::size_t n, std::size_t k) {
  DenseArray out = DenseArray::zeros({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(k);
    for (std::size_t j = 0; j < k; ++j) row[j] = rng.normal();
    row = softmax(row);
    for (std::size_t j = 0; j < k; ++j) out(i, j) = row[j];
  }
  return out;
}

}  // namespace

TEST_CASE("accuracy: ties go to class 0, perfect predictions score 1") {
  std::vector<int> labels{0, 1, 0, 1};
  DenseArray zero = DenseArray::zeros({4, 2});
  CHECK(accuracy(zero, labels) == 0.5);  // argmax of all-equal rows is class 0

  DenseArray perfect = row_matrix(4, 2, {5, 0, 0, 5, 3, -1, -2, 7});
  CHECK(accuracy(perfect, labels) == 1.0);

  CHECK_THROWS_AS(accuracy(DenseArray{}, {}), std::invalid_argument);
  CHECK_THROWS_AS(accuracy(zero, std::vector<int>{0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(accuracy(zero, std::vector<int>{0, 1, 0, 7}), std::invalid_argument);
}

TEST_CASE("accuracy matches a naive recount on random logits") {
  Rng rng = Rng::stream(71, "acc");
  for (int rep = 0; rep < 20; ++rep) {
    std::size_t n = 5 + static_cast<std::size_t>(rng.uniform() * 40);
    std::size_t k = 2 + static_cast<std::size_t>(rng.uniform() * 6);
    DenseArray logits = DenseArray::zeros({n, k});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.uniform() * k);
      for (std::size_t j = 0; j < k; ++j) logits(i, j) = rng.normal();
    }
    CHECK(accuracy(logits, labels) == brute_accuracy(logits, labels));
  }
}

TEST_CASE("ece: hand examples and the single-bin identity") {
  // all confidence 1.0, half correct -> |0.5 - 1.0| = 0.5 whatever the binning
  DenseArray sure = row_matrix(4, 2, {1, 0, 1, 0, 1, 0, 1, 0});
  std::vector<int> half{0, 0, 1, 1};
  CHECK(ece(sure, half, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ece(sure, half, 15) == doctest::Approx(0.5).epsilon(1e-12));

  // confidence 0.75 with 3 of 4 correct is perfectly calibrated
  DenseArray cal = row_matrix(4, 2, {0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.25, 0.75});
  std::vector<int> mostly{0, 0, 0, 0};
  CHECK(ece(cal, mostly, 1) == doctest::Approx(0.0).epsilon(1e-12));

  // one bin reduces to |overall accuracy - mean confidence|
  Rng rng = Rng::stream(72, "ece1");
  DenseArray probs = random_probs(rng, 30, 3);
  std::vector<int> labels(30);
  for (int& l : labels) l = static_cast<int>(rng.uniform() * 3);
  double conf_sum = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    double best = probs(i, 0);
    for (std::size_t k = 1; k < 3; ++k) best = std::max(best, probs(i, k));
    conf_sum += best;
  }
  double expect = std::fabs(accuracy(probs, labels) - conf_sum / 30.0);
  CHECK(ece(probs, labels, 1) == doctest::Approx(expect).epsilon(1e-12));

  // rows must be valid distributions
  DenseArray bad = row_matrix(1, 2, {0.9, 0.3});
  CHECK_THROWS_AS(ece(bad, std::vector<int>{0}, 15), std::invalid_argument);
  DenseArray neg = row_matrix(1, 2, {1.2, -0.2});
  CHECK_THROWS_AS(ece(neg, std::vector<int>{0}, 15), std::invalid_argument);
  CHECK_THROWS_AS(ece(sure, half, 0), std::invalid_argument);
}

TEST_CASE("ece matches a naive binning on random inputs") {
  Rng rng = Rng::stream(73, "ece2");
  for (int rep = 0; rep < 20; ++rep) {
    std::size_t n = 10 + static_cast<std::size_t>(rng.uniform() * 60);
    std::size_t k = 2 + static_cast<std::size_t>(rng.uniform() * 5);
    std::size_t bins = 1 + static_cast<std::size_t>(rng.uniform() * 20);
    DenseArray probs = random_probs(rng, n, k);
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(rng.uniform() * k);
    CHECK(ece(probs, labels, bins) ==
          doctest::Approx(brute_ece(probs, labels, bins)).epsilon(1e-10));
  }
}

TEST_CASE("nll: uniform and one-hot references") {
  DenseArray uniform = row_matrix(2, 4, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25});
  std::vector<int> labels{1, 3};
  CHECK(nll(uniform, labels) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  DenseArray onehot = row_matrix(2, 4, {0, 1, 0, 0, 0, 0, 0, 1});
  CHECK(nll(onehot, labels) == 0.0);

  // the logit form agrees with softmax followed by the probability form
  Rng rng = Rng::stream(74, "nll");
  for (int rep = 0; rep < 10; ++rep) {
    DenseArray logits = DenseArray::zeros({8, 5});
    std::vector<int> ls(8);
    for (std::size_t i = 0; i < 8; ++i) {
      ls[i] = static_cast<int>(rng.uniform() * 5);
      for (std::size_t j = 0; j < 5; ++j) logits(i, j) = rng.normal() * 3.0;
    }
    DenseArray probs = DenseArray::zeros({8, 5});
    for (std::size_t i = 0; i < 8; ++i) {
      std::vector<double> row(5);
      for (std::size_t j = 0; j < 5; ++j) row[j] = logits(i, j);
      row = softmax(row);
      for (std::size_t j = 0; j < 5; ++j) probs(i, j) = row[j];
    }
    CHECK(nll_from_logits(logits, ls) == doctest::Approx(nll(probs, ls)).epsilon(1e-12));
    CHECK(nll(probs, ls) == doctest::Approx(brute_nll(probs, ls)).epsilon(1e-12));
  }

  DenseArray bad = row_matrix(1, 2, {0.7, 0.7});
  CHECK_THROWS_AS(nll(bad, std::vector<int>{0}), std::invalid_argument);
}

TEST_CASE("pearson_cc: affine relations and degenerate input") {
  std::vector<double> xs{1, 2, 3, 4, 5};
  std::vector<double> up, down;
  for (double x : xs) {
    up.push_back(2.0 * x + 1.0);
    down.push_back(-x);
  }
  CHECK(pearson_cc(xs, up) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson_cc(xs, down) == doctest::Approx(-1.0).epsilon(1e-12));

  Rng rng = Rng::stream(75, "pcc");
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> a(12), b(12);
    for (std::size_t i = 0; i < 12; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    CHECK(pearson_cc(a, b) == doctest::Approx(brute_pearson(a, b)).epsilon(1e-12));
  }

  std::vector<double> flat{3, 3, 3, 3, 3};
  CHECK_THROWS_AS(pearson_cc(xs, flat), std::invalid_argument);
  CHECK_THROWS_AS(pearson_cc(flat, xs), std::invalid_argument);
  CHECK_THROWS_AS(pearson_cc(std::vector<double>{1.0}, std::vector<double>{2.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(pearson_cc(xs, std::vector<double>{1, 2}), std::invalid_argument);
}

namespace {

struct RiggedWorld {
  VisionParams v;
  TextParams t;
  DenseArray inputs;
  std::vector<TokenSeq> pool;
};

// Text encoder that maps every sequence to the same unit vector e1, and a
// vision encoder whose output is directly controllable through b2.
RiggedWorld make_rigged(std::size_t d_in, std::size_t embed, std::size_t n) {
  RiggedWorld w;
  w.v.W1 = DenseArray::zeros({4, d_in});
  w.v.b1 = DenseArray::zeros({4});
  w.v.W2 = DenseArray::zeros({embed, 4});
  w.v.b2 = DenseArray::zeros({embed});
  w.t.Emb = DenseArray::zeros({8, 3});
  w.t.Wp = DenseArray::zeros({embed, 3});
  w.t.bp = DenseArray::zeros({embed});
  w.t.bp[0] = 1.0;
  Rng rng = Rng::stream(76, "rigged");
  w.inputs = DenseArray::zeros({n, d_in});
  for (double& x : w.inputs.data) x = rng.normal();
  w.pool = {{0, 1}, {2, 3}, {4, 5}};
  return w;
}

}  // namespace

TEST_CASE("energy_gap: zero at the anchor, controlled offsets, symmetry") {
  RiggedWorld w = make_rigged(5, 3, 7);
  CHECK(energy_gap(w.v, w.v, w.t, w.inputs, w.pool) == 0.0);

  // every text feature is e1, so only the first feature coordinate matters:
  // offsetting b2 by delta makes every squared energy difference delta_1^2
  VisionParams moved = w.v;
  moved.b2[0] += 0.75;
  moved.b2[1] += 123.0;  // invisible through G = e1
  double gap = energy_gap(moved, w.v, w.t, w.inputs, w.pool);
  CHECK(gap == doctest::Approx(0.75 * 0.75).epsilon(1e-12));
  CHECK(energy_gap(w.v, moved, w.t, w.inputs, w.pool) == doctest::Approx(gap).epsilon(1e-15));

  CHECK_THROWS_AS(energy_gap(w.v, w.v, w.t, w.inputs, {}), std::invalid_argument);
}

TEST_CASE("energy_gap matches a per-pair brute force on random models") {
  Rng rng = Rng::stream(77, "egap");
  ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dim = 6;
  cfg.embed_dim = 4;
  cfg.vocab = 16;
  cfg.token_dim = 4;
  cfg.token_len = 3;
  for (int rep = 0; rep < 10; ++rep) {
    VisionParams a = init_vision(cfg, rng);
    VisionParams b = init_vision(cfg, rng);
    TextParams t = init_text(cfg, rng);
    std::size_t n = 6;
    DenseArray inputs = DenseArray::zeros({n, cfg.input_dim});
    for (double& x : inputs.data) x = rng.normal();
    std::vector<TokenSeq> pool;
    for (int m = 0; m < 5; ++m) {
      TokenSeq s;
      for (std::size_t l = 0; l < cfg.token_len; ++l)
        s.push_back(static_cast<std::uint32_t>(rng.uniform() * cfg.vocab));
      pool.push_back(s);
    }
    double brute = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x(cfg.input_dim);
      for (std::size_t d = 0; d < cfg.input_dim; ++d) x[d] = inputs(i, d);
      for (const TokenSeq& s : pool) {
        double diff = energy(a, t, x, s) - energy(b, t, x, s);
        brute += diff * diff;
      }
    }
    brute /= static_cast<double>(n * pool.size());
    CHECK(std::fabs(energy_gap(a, b, t, inputs, pool) - brute) <= 1e-10);
  }
}

TEST_CASE("feature_distortion: exact offset and brute-force parity") {
  RiggedWorld w = make_rigged(5, 3, 9);
  CHECK(feature_distortion(w.v, w.v, w.inputs) == 0.0);

  VisionParams moved = w.v;
  moved.b2[0] += 3.0;
  moved.b2[2] += 4.0;
  CHECK(feature_distortion(moved, w.v, w.inputs) == doctest::Approx(5.0).epsilon(1e-12));

  Rng rng = Rng::stream(78, "dist");
  ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dim = 6;
  cfg.embed_dim = 4;
  for (int rep = 0; rep < 10; ++rep) {
    VisionParams a = init_vision(cfg, rng);
    VisionParams b = init_vision(cfg, rng);
    DenseArray inputs = DenseArray::zeros({8, cfg.input_dim});
    for (double& x : inputs.data) x = rng.normal();
    double brute = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      std::vector<double> x(cfg.input_dim);
      for (std::size_t d = 0; d < cfg.input_dim; ++d) x[d] = inputs(i, d);
      std::vector<double> fa = vision_forward(a, x);
      std::vector<double> fb = vision_forward(b, x);
      double s = 0.0;
      for (std::size_t d = 0; d < fa.size(); ++d) s += (fa[d] - fb[d]) * (fa[d] - fb[d]);
      brute += std::sqrt(s);
    }
    brute /= 8.0;
    CHECK(std::fabs(feature_distortion(a, b, inputs) - brute) <= 1e-10);
  }
}

TEST_CASE("metrics report survives a JSON round trip") {
  MetricsReport r;
  r.method = "LIPSUM";
  r.seed = 42;
  r.config_hash = "0123456789abcdef";
  r.energy_gap = 0.25;
  r.shift_acc_mean = 0.875;
  r.rel_shift_acc = 0.9;
  DomainMetrics ref;
  ref.name = "reference";
  ref.accuracy = 0.96875;
  ref.ece = 0.015625;
  ref.nll = 0.125;
  ref.feature_distortion = 0.0;
  DomainMetrics shift;
  shift.name = "shift1";
  shift.accuracy = 0.875;
  shift.ece = 0.0625;
  shift.nll = 0.5;
  shift.feature_distortion = 1.5;
  r.domains = {ref, shift};

  MetricsReport back = report_from_json(report_to_json(r));
  CHECK(back.method == r.method);
  CHECK(back.seed == r.seed);
  CHECK(back.config_hash == r.config_hash);
  CHECK(back.energy_gap == r.energy_gap);
  CHECK(back.shift_acc_mean == r.shift_acc_mean);
  CHECK(back.rel_shift_acc == r.rel_shift_acc);
  REQUIRE(back.domains.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.domains[i].name == r.domains[i].name);
    CHECK(back.domains[i].accuracy == r.domains[i].accuracy);
    CHECK(back.domains[i].ece == r.domains[i].ece);
    CHECK(back.domains[i].nll == r.domains[i].nll);
    CHECK(back.domains[i].feature_distortion == r.domains[i].feature_distortion);
  }
}
