#include <doctest.h>

#include <random>

#include "actseg/error.hpp"
#include "actseg/losses.hpp"
#include "actseg/trainer.hpp"
#include "oracles.hpp"

using namespace actseg;

TEST_SUITE_BEGIN("losses");

namespace {

MatD row(std::initializer_list<double> v) {
  MatD m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

struct Instance {
  std::vector<MatD> logits;
  std::vector<int> labels;
};

Instance random_instance(std::mt19937_64& rng, int max_t = 6, int max_k = 4, int max_s = 3, double scale = 2.0) {
  std::uniform_int_distribution<int> t_d(1, max_t), k_d(2, max_k), s_d(1, max_s);
  std::normal_distribution<double> n(0.0, scale);
  Instance in;
  const int t = t_d(rng), k = k_d(rng), s = s_d(rng);
  std::uniform_int_distribution<int> lab(0, k - 1);
  for (int i = 0; i < t; ++i) in.labels.push_back(lab(rng));
  for (int j = 0; j < s; ++j) {
    MatD z(t, k);
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    in.logits.push_back(z);
  }
  return in;
}

}  // namespace

TEST_CASE("softmax examples") {
  const MatD u = softmax(row({0.0, 0.0}));
  CHECK(u(0, 0) == doctest::Approx(0.5));
  const MatD big = softmax(row({1000.0, 0.0}));
  CHECK(std::abs(big(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(big(0, 1)) < 1e-12);
  CHECK(big.allFinite());
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(rng);
    const MatD p = softmax(in.logits[0]);
    const MatD shifted = softmax(MatD(in.logits[0].array() + 37.5));
    CHECK((p - shifted).cwiseAbs().maxCoeff() < 1e-12);
    for (Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-12);
    CHECK((p - oracle::softmax_rows(in.logits[0])).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("framewise cross-entropy examples") {
  const std::vector<int> zero{0};
  CHECK(framewise_cross_entropy(row({0.5, 0.5}), std::span<const int>(zero)) == doctest::Approx(std::log(2.0)));
  CHECK(framewise_cross_entropy(row({1.0, 0.0}), std::span<const int>(zero)) == 0.0);
  MatD p(2, 2);
  p << 0.9, 0.1, 0.2, 0.8;
  const std::vector<int> y{0, 1};
  CHECK(framewise_cross_entropy(p, std::span<const int>(y)) ==
        doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2.0).epsilon(1e-14));
  CHECK(framewise_cross_entropy(p, std::span<const int>(y)) == doctest::Approx(0.164252).epsilon(1e-6));
  // Log is clamped at 1e-12.
  CHECK(framewise_cross_entropy(row({1.0, 0.0}), std::span<const int>(std::vector<int>{1})) ==
        doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(framewise_cross_entropy(MatD(0, 2), std::span<const int>()), EmptyInput);
}

TEST_CASE("multi-stage cross-entropy is an unweighted sum") {
  MatD p(2, 2);
  p << 0.9, 0.1, 0.2, 0.8;
  const std::vector<int> y{0, 1};
  const double c = framewise_cross_entropy(p, std::span<const int>(y));
  std::vector<MatD> one{p}, three{p, p, p};
  CHECK(multi_stage_cross_entropy<double>(one, y) == c);
  CHECK(multi_stage_cross_entropy<double>(three, y) == doctest::Approx(3 * c).epsilon(1e-15));
  MatD q(2, 2);
  q << 0.6, 0.4, 0.5, 0.5;
  std::vector<MatD> two{p, q}, dup{p, q, q};
  CHECK(multi_stage_cross_entropy<double>(dup, y) - multi_stage_cross_entropy<double>(two, y) ==
        doctest::Approx(framewise_cross_entropy(q, std::span<const int>(y))).epsilon(1e-14));
  CHECK_THROWS_AS(multi_stage_cross_entropy<double>(std::vector<MatD>{}, y), EmptyInput);
}

TEST_CASE("MSE probability loss examples") {
  LossConfig plain;
  const std::vector<int> zero{0};
  CHECK(mse_probability_loss(row({1.0, 0.0}), std::span<const int>(zero), plain) == 0.0);
  CHECK(mse_probability_loss(row({0.8, 0.2}), std::span<const int>(zero), plain) == doctest::Approx(0.04));
  LossConfig trunc;
  trunc.smoothing_mode = SmoothingMode::truncated_adjacent;
  MatD constant(4, 3);
  constant.rowwise() = row({0.2, 0.3, 0.5}).row(0);
  const std::vector<int> y{0, 1, 2, 0};
  CHECK(mse_probability_loss(constant, std::span<const int>(y), trunc) == 0.0);
  CHECK(mse_probability_loss(row({0.2, 0.8}), std::span<const int>(zero), trunc) == 0.0);
  CHECK_THROWS_AS(mse_probability_loss(MatD(0, 2), std::span<const int>(), plain), EmptyInput);
}

TEST_CASE("MSE modes match loop oracles, truncation caps the log ratio") {
  std::mt19937_64 rng(2);
  LossConfig plain, trunc;
  trunc.smoothing_mode = SmoothingMode::truncated_adjacent;
  trunc.truncation = 1.5;
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng, 8, 5, 1, 4.0);
    const MatD p = oracle::softmax_rows(in.logits[0]);
    CHECK(std::abs(mse_probability_loss(p, std::span<const int>(in.labels), plain) - oracle::plain_mse(p, in.labels)) <
          1e-15);
    CHECK(std::abs(mse_probability_loss(p, std::span<const int>(in.labels), trunc) -
                   oracle::truncated_mse(p, 1.5)) < 1e-12);
    CHECK(mse_probability_loss(p, std::span<const int>(in.labels), trunc) <= 1.5 * 1.5 + 1e-12);
  }
}

TEST_CASE("combined loss: substitution example and degenerate lambda") {
  const std::vector<int> zero{0};
  // Logits giving probabilities [0.5, 0.5]: CE = ln 2, plain MSE = 0.25.
  std::vector<MatD> uniform{row({0.0, 0.0})};
  LossConfig cfg;
  cfg.lambda = 0.15;
  const auto b = combined_loss<double>(uniform, zero, cfg);
  CHECK(b.ce_sum == doctest::Approx(std::log(2.0)));
  CHECK(b.mse_sum == doctest::Approx(0.25));
  CHECK(b.total == doctest::Approx(std::log(2.0) + 0.15 * 0.25));
  // CE=0.693147 and MSE=0.04 substituted directly.
  CHECK(0.693147 + 0.15 * 0.04 == doctest::Approx(0.699147).epsilon(1e-12));

  std::vector<MatD> eighty{row({std::log(0.8), std::log(0.2)})};
  const auto e = combined_loss<double>(eighty, zero, cfg);
  CHECK(e.mse_sum == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(e.total == doctest::Approx(-std::log(0.8) + 0.15 * 0.04).epsilon(1e-12));
}

TEST_CASE("combined loss equals the compositional oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng, 6, 4, 3);
    for (auto mode : {SmoothingMode::plain_mse, SmoothingMode::truncated_adjacent}) {
      LossConfig cfg;
      cfg.smoothing_mode = mode;
      cfg.lambda = 0.37;
      double expected = 0.0;
      for (const auto& z : in.logits) {
        const MatD p = oracle::softmax_rows(z);
        const double mse = mode == SmoothingMode::plain_mse ? oracle::plain_mse(p, in.labels)
                                                            : oracle::truncated_mse(p, cfg.truncation);
        expected += oracle::cross_entropy(p, in.labels) + cfg.lambda * mse;
      }
      CHECK(std::abs(combined_loss<double>(in.logits, in.labels, cfg).total - expected) < 1e-12);
    }
  }
}

TEST_CASE("combined loss properties: nonnegative, lambda-linear, final-stage-only flag") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng);
    LossConfig a, b;
    a.lambda = 0.0;
    b.lambda = 0.8;
    const auto la = combined_loss<double>(in.logits, in.labels, a);
    const auto lb = combined_loss<double>(in.logits, in.labels, b);
    CHECK(la.total >= 0.0);
    CHECK(la.total == multi_stage_cross_entropy<double>(
                          [&] {
                            std::vector<MatD> p;
                            for (const auto& z : in.logits) p.push_back(softmax(z));
                            return p;
                          }(),
                          in.labels));
    CHECK(std::abs((lb.total - la.total) - 0.8 * lb.mse_sum) < 1e-12);

    LossConfig last = b;
    last.mse_final_stage_only = true;
    const auto ll = combined_loss<double>(in.logits, in.labels, last);
    const MatD p_last = softmax(in.logits.back());
    CHECK(std::abs(ll.mse_sum - oracle::plain_mse(p_last, in.labels)) < 1e-14);
  }
  // A confident correct prediction drives the loss to (numerically) zero.
  std::vector<MatD> sure{row({60.0, -60.0})};
  LossConfig plain;
  CHECK(combined_loss<double>(sure, std::vector<int>{0}, plain).total < 1e-40);
}

TEST_CASE("analytic logit gradients match finite differences in every mode") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto in = random_instance(rng);
    for (auto mode : {SmoothingMode::plain_mse, SmoothingMode::truncated_adjacent}) {
      for (double lambda : {0.0, 0.15, 1.0}) {
        LossConfig cfg;
        cfg.smoothing_mode = mode;
        cfg.lambda = lambda;
        cfg.truncation = 1.0;  // small cap so clipping is exercised
        ParameterSet<double> params;
        for (std::size_t s = 0; s < in.logits.size(); ++s) {
          const auto i = params.add("z" + std::to_string(s), {in.logits[s].rows(), in.logits[s].cols()},
                                    in.logits[s].rows(), in.logits[s].cols());
          params[i] = in.logits[s];
        }
        const std::vector<MatD> reference = in.logits;
        auto loss = [&](const ParameterSet<double>& p, ParameterSet<double>* grad) {
          std::vector<MatD> z;
          for (const auto& e : p) z.push_back(e.value);
          std::vector<MatD> g;
          const auto b = combined_loss<double>(z, in.labels, cfg, grad ? &g : nullptr, reference);
          if (grad)
            for (std::size_t s = 0; s < g.size(); ++s) (*grad)[s] = g[s];
          return b.total;
        };
        const auto r = finite_difference_gradcheck(loss, params, 1e-5, 200, static_cast<std::uint64_t>(trial));
        INFO(trial, " ", r.worst_parameter, " ", r.worst_index, " T=", in.labels.size(), " S=", in.logits.size());
        CHECK(r.max_relative_error < 1e-5);
      }
    }
  }
}

TEST_CASE("argmax_rows picks the first maximum") {
  MatD m(3, 3);
  m << 1, 3, 3, 0, 0, 0, -1, -5, -0.5;
  CHECK(argmax_rows(m) == std::vector<int>{1, 0, 2});
}

TEST_CASE("loss config validation and parsing") {
  LossConfig bad;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.lambda = 0.1;
  bad.truncation = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_smoothing_mode("truncated_adjacent") == SmoothingMode::truncated_adjacent);
  CHECK(to_string(SmoothingMode::plain_mse) == "plain_mse");
  CHECK_THROWS_AS(parse_smoothing_mode("huber"), ConfigError);
}

TEST_SUITE_END();
