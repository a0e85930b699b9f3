// Copyright 2026 The gadft Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gadft/gaussian.hpp"
#include "gadft/ops.hpp"
#include "oracles.hpp"

using namespace gadft;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(Index rows, Index cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// [N,C,H,W] with every location drawn from N(offset_c, A A^T).
BasicTensor<double> correlated_features(Index n, Index c, Index h, Index w, const MatrixXd& a,
                                        Rng& rng) {
  BasicTensor<double> t({n, c, h, w});
  auto d = t.mutable_data();
  const Index hw = h * w;
  for (Index s = 0; s < n; ++s)
    for (Index p = 0; p < hw; ++p) {
      VectorXd z(c);
      for (Index i = 0; i < c; ++i) z(i) = rng.normal();
      const VectorXd x = a * z;
      for (Index i = 0; i < c; ++i) d[(s * c + i) * hw + p] = x(i) + 0.5 * static_cast<double>(i);
    }
  return t;
}

double relative_frobenius(const MatrixXd& got, const MatrixXd& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

}  // namespace

TEST_CASE("ledoit_wolf matches the direct formula") {
  Rng rng(11);
  const MatrixXd x = random_matrix(8, 3, rng);
  const auto est = ledoit_wolf(x);
  const auto [cov, rho] = gadft::testing::direct_ledoit_wolf(x);
  CHECK(relative_frobenius(est.covariance, cov) <= 1e-6);
  CHECK(est.shrinkage == doctest::Approx(rho).epsilon(1e-6));
  CHECK_FALSE(est.degenerate);
}

TEST_CASE("ledoit_wolf with one sample is degenerate") {
  MatrixXd x(1, 3);
  x << 0.3, -2.0, 5.0;
  const auto est = ledoit_wolf(x);
  CHECK(est.degenerate);
  CHECK(est.shrinkage == 1.0);
  CHECK(est.covariance.isApprox(kDegenerateVariance * MatrixXd::Identity(3, 3)));
}

TEST_CASE("ledoit_wolf recovers an identity covariance") {
  Rng rng(5);
  const MatrixXd x = random_matrix(10000, 4, rng);
  const auto est = ledoit_wolf(x);
  CHECK((est.covariance - MatrixXd::Identity(4, 4)).norm() <= 0.1);
}

TEST_CASE("ledoit_wolf is positive definite on random inputs") {
  Rng rng(99);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Index n = rng.uniform_int(3, 24), d = rng.uniform_int(1, 16);
    MatrixXd x = random_matrix(n, d, rng);
    for (Index j = 0; j < d; ++j) x.col(j) *= std::exp(rng.uniform(-3.0, 3.0));
    const auto est = ledoit_wolf(x);
    CHECK(est.shrinkage >= 0.0);
    CHECK(est.shrinkage <= 1.0);
    CHECK((est.covariance - est.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::LLT<MatrixXd> llt(est.covariance);
    INFO("n=" << n << " d=" << d << " rho=" << est.shrinkage);
    CHECK(llt.info() == Eigen::Success);
    const auto [cov, rho] = gadft::testing::direct_ledoit_wolf(x);
    CHECK(relative_frobenius(est.covariance, cov) <= 1e-6);
    ++checked;
  }
  CHECK(checked == 500);
}

TEST_CASE("ledoit_wolf with two samples does not shrink") {
  // Both centered outer products equal S, so the estimated shrinkage
  // variance is zero and the rank-one S is returned unchanged.
  Rng rng(10);
  const MatrixXd x = random_matrix(2, 5, rng);
  const auto est = ledoit_wolf(x);
  CHECK(est.shrinkage <= 1e-12);
  const MatrixXd l = cholesky_factor(est.covariance);
  CHECK(l.allFinite());
  CHECK(relative_frobenius(l * l.transpose(), est.covariance) <= 1e-5);
}

TEST_CASE("cholesky_factor loads the diagonal of a singular matrix") {
  VectorXd v(3);
  v << 1.0, 2.0, 3.0;
  const MatrixXd rank_one = v * v.transpose();
  const MatrixXd l = cholesky_factor(rank_one);
  CHECK((l * l.transpose() - rank_one).norm() <= 1e-4);
  MatrixXd negative = -MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(cholesky_factor(negative), EstimationError);
}

TEST_CASE("gaussian modes parse and print") {
  for (auto m : {GaussianMode::global, GaussianMode::tied, GaussianMode::local}) {
    CHECK(parse_gaussian_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_gaussian_mode("diagonal"), ConfigError);
}

TEST_CASE("constant features give a zero distance map") {
  BasicTensor<double> x({3, 4, 2, 2});
  auto d = x.mutable_data();
  for (Index i = 0; i < x.numel(); ++i) d[i] = 0.25 * static_cast<double>((i / 4) % 4);
  for (auto mode : {GaussianMode::global, GaussianMode::tied, GaussianMode::local}) {
    const auto g = fit_level(x, mode);
    CHECK(g.degenerate);
    for (const auto& c : g.covariances) {
      CHECK(c.isApprox(kDegenerateVariance * MatrixXd::Identity(4, 4)));
    }
    for (Index p = 0; p < g.locations(); ++p) {
      for (Index ch = 0; ch < 4; ++ch) CHECK(g.mean_at(p)(ch) == doctest::Approx(0.25 * ch));
    }
    const auto a = mahalanobis_map(x, g);
    CHECK(a.shape() == Shape{3, 2, 2});
    for (double v : a.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("fitted covariances are symmetric and reconstructed by their factor") {
  Rng rng(3);
  const MatrixXd a = random_matrix(5, 5, rng);
  const auto x = correlated_features(12, 5, 3, 2, a, rng);
  for (auto mode : {GaussianMode::global, GaussianMode::tied, GaussianMode::local}) {
    const auto g = fit_level(x, mode);
    CHECK(g.covariances.size() == (mode == GaussianMode::local ? 6u : 1u));
    for (std::size_t i = 0; i < g.covariances.size(); ++i) {
      const MatrixXd& c = g.covariances[i];
      CHECK((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK(relative_frobenius(g.factors[i] * g.factors[i].transpose(), c) <= 1e-5);
    }
  }
}

TEST_CASE("tied and global fits match explicit pooling loops") {
  Rng rng(21);
  const MatrixXd a = random_matrix(3, 3, rng);
  const auto x = correlated_features(7, 3, 2, 3, a, rng);
  const Index n = 7, c = 3, hw = 6;
  auto at = [&](Index s, Index ch, Index p) { return x.data()[(s * c + ch) * hw + p]; };

  MatrixXd centered(n * hw, c);
  Index row = 0;
  for (Index p = 0; p < hw; ++p) {
    VectorXd mean = VectorXd::Zero(c);
    for (Index s = 0; s < n; ++s)
      for (Index ch = 0; ch < c; ++ch) mean(ch) += at(s, ch, p) / static_cast<double>(n);
    for (Index s = 0; s < n; ++s, ++row)
      for (Index ch = 0; ch < c; ++ch) centered(row, ch) = at(s, ch, p) - mean(ch);
  }
  const auto tied = fit_level(x, GaussianMode::tied);
  CHECK(relative_frobenius(tied.covariances[0],
                           gadft::testing::direct_ledoit_wolf(centered).first) <= 1e-6);

  MatrixXd all(n * hw, c);
  row = 0;
  for (Index p = 0; p < hw; ++p)
    for (Index s = 0; s < n; ++s, ++row)
      for (Index ch = 0; ch < c; ++ch) all(row, ch) = at(s, ch, p);
  const auto global = fit_level(x, GaussianMode::global);
  CHECK(relative_frobenius(global.covariances[0],
                           gadft::testing::direct_ledoit_wolf(all).first) <= 1e-6);
  CHECK((global.means.row(0) - all.colwise().mean()).norm() <= 1e-12);
}

TEST_CASE("tied means agree with the global mean on stationary features") {
  Rng rng(8);
  const Index n = 400;
  const MatrixXd a = MatrixXd::Identity(3, 3);
  const auto x = correlated_features(n, 3, 2, 2, a, rng);
  const auto tied = fit_level(x, GaussianMode::tied);
  const auto global = fit_level(x, GaussianMode::global);
  const double bound = 3.0 * 1.0 / std::sqrt(static_cast<double>(n));
  for (Index p = 0; p < 4; ++p)
    for (Index ch = 0; ch < 3; ++ch) {
      CHECK(std::abs(tied.means(p, ch) - global.means(0, ch)) <= bound);
    }
}

TEST_CASE("local fit needs two images") {
  BasicTensor<double> x({1, 2, 2, 2}, 1.0);
  CHECK_THROWS_AS(fit_level(x, GaussianMode::local), EstimationError);
  CHECK_NOTHROW(fit_level(x, GaussianMode::tied));
}

TEST_CASE("mahalanobis distance of a hand-evaluated point") {
  MatrixXd cov(2, 2);
  cov << 4.0, 0.0, 0.0, 1.0;
  const auto g = LevelGaussian::from_moments(GaussianMode::global, 1, 1, MatrixXd::Zero(1, 2), {cov});
  BasicTensor<double> x({1, 2, 1, 1}, std::vector<double>{2.0, 1.0});
  CHECK(mahalanobis_map(x, g).item() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("identity covariance gives the Euclidean distance") {
  Rng rng(4);
  const MatrixXd means = random_matrix(6, 3, rng);
  const auto g = LevelGaussian::from_moments(GaussianMode::tied, 2, 3, means, {MatrixXd::Identity(3, 3)});
  const auto x = gadft::testing::random_tensor({2, 3, 2, 3}, rng);
  const auto a = mahalanobis_map(x, g);
  for (Index s = 0; s < 2; ++s)
    for (Index p = 0; p < 6; ++p) {
      double sq = 0.0;
      for (Index ch = 0; ch < 3; ++ch) {
        const double diff = x.data()[(s * 3 + ch) * 6 + p] - means(p, ch);
        sq += diff * diff;
      }
      CHECK(a.data()[s * 6 + p] == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
    }
}

TEST_CASE("mahalanobis_map rejects mismatched features") {
  const auto g = LevelGaussian::from_moments(GaussianMode::global, 2, 2, MatrixXd::Zero(1, 3),
                                             {MatrixXd::Identity(3, 3)});
  CHECK_THROWS_AS(mahalanobis_map(Tensor({1, 4, 2, 2}), g), DimensionError);
  CHECK_THROWS_AS(mahalanobis_map(Tensor({1, 3, 4, 2}), g), DimensionError);
  CHECK_THROWS_AS(LevelGaussian::from_moments(GaussianMode::tied, 2, 2, MatrixXd::Zero(1, 3),
                                              {MatrixXd::Identity(3, 3)}),
                  DimensionError);
}

TEST_CASE("log density of the standard normal") {
  const auto g = LevelGaussian::from_moments(GaussianMode::global, 1, 1, MatrixXd::Zero(1, 1),
                                             {MatrixXd::Identity(1, 1)});
  VectorXd x(1);
  x << 0.0;
  CHECK(gaussian_log_density(x, g, 0) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)));
  CHECK(gaussian_log_density(x, g, 0) == doctest::Approx(-0.9189).epsilon(1e-4));
}

TEST_CASE("one-dimensional density integrates to one") {
  MatrixXd mean(1, 1), cov(1, 1);
  mean << 0.3;
  cov << 2.5;
  const auto g = LevelGaussian::from_moments(GaussianMode::global, 1, 1, mean, {cov});
  const double step = 1e-3;
  double integral = 0.0;
  VectorXd x(1);
  for (double t = -20.0; t <= 20.0; t += step) {
    x << t;
    integral += std::exp(gaussian_log_density(x, g, 0)) * step;
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("density decreases with the distance") {
  Rng rng(12);
  const MatrixXd a = random_matrix(3, 3, rng);
  const MatrixXd cov = a * a.transpose() + MatrixXd::Identity(3, 3);
  const auto g = LevelGaussian::from_moments(GaussianMode::global, 1, 1, MatrixXd::Zero(1, 3), {cov});
  VectorXd dir(3);
  dir << 0.4, -1.0, 0.7;
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 20; ++k) {
    const double density = gaussian_log_density(0.25 * k * dir, g, 0);
    CHECK(density < previous);
    previous = density;
  }
}

TEST_CASE("whitening reproduces the Mahalanobis map") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Index c = rng.uniform_int(1, 6);
    const auto mode = static_cast<GaussianMode>(trial % 3);
    const auto x = correlated_features(8, c, 2, 2, random_matrix(c, c, rng), rng);
    const auto g = fit_level(x, mode);
    const auto z = whiten(x, g);
    const auto a = mahalanobis_map(x, g);
    for (Index s = 0; s < 8; ++s)
      for (Index p = 0; p < 4; ++p) {
        double sq = 0.0;
        for (Index ch = 0; ch < c; ++ch) sq += std::pow(z.data()[(s * c + ch) * 4 + p], 2);
        CHECK(std::abs(std::sqrt(sq) - a.data()[s * 4 + p]) <= 1e-5);
      }
    BasicTensor<double> mu({1, c, 2, 2});
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < 4; ++p) mu.mutable_data()[ch * 4 + p] = g.mean_at(p)(ch);
    const auto zero = whiten(mu, g);
    for (double v : zero.data()) CHECK(std::abs(v) <= 1e-12);
  }
}

TEST_CASE("whitened training features have identity covariance") {
  Rng rng(17);
  const MatrixXd a = MatrixXd::Identity(8, 8) + 0.15 * random_matrix(8, 8, rng);
  const auto x = correlated_features(500, 8, 1, 1, a, rng);
  const auto g = fit_level(x, GaussianMode::global);
  const auto z = whiten(x, g);
  MatrixXd rows(500, 8);
  for (Index s = 0; s < 500; ++s)
    for (Index ch = 0; ch < 8; ++ch) rows(s, ch) = z.data()[s * 8 + ch];
  const MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  const MatrixXd cov = centered.transpose() * centered / 500.0;
  CHECK((cov - MatrixXd::Identity(8, 8)).norm() <= 0.2);
}

TEST_CASE("mahalanobis map is invariant under invertible linear maps") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const Index c = 4;
    const auto x = correlated_features(10, c, 2, 2, random_matrix(c, c, rng), rng);
    const auto mode = static_cast<GaussianMode>(trial % 3);
    const auto g = fit_level(x, mode);
    MatrixXd t = random_matrix(c, c, rng) + 2.0 * MatrixXd::Identity(c, c);
    MatrixXd means = g.means * t.transpose();
    std::vector<MatrixXd> covs;
    for (const auto& s : g.covariances) covs.push_back(t * s * t.transpose());
    const auto gt = LevelGaussian::from_moments(mode, 2, 2, means, covs);
    BasicTensor<double> xt(x.shape());
    for (Index s = 0; s < 10; ++s)
      for (Index p = 0; p < 4; ++p) {
        VectorXd v(c);
        for (Index ch = 0; ch < c; ++ch) v(ch) = x.data()[(s * c + ch) * 4 + p];
        const VectorXd tv = t * v;
        for (Index ch = 0; ch < c; ++ch) xt.mutable_data()[(s * c + ch) * 4 + p] = tv(ch);
      }
    const auto a = mahalanobis_map(x, g);
    const auto at = mahalanobis_map(xt, gt);
    for (Index i = 0; i < a.numel(); ++i) {
      CHECK(std::abs(a.data()[i] - at.data()[i]) <= 1e-4 * std::max(1.0, a.data()[i]));
    }
  }
}

TEST_CASE("gradient of the mean distance matches finite differences") {
  Rng rng(55);
  for (int trial = 0; trial < 9; ++trial) {
    const auto mode = static_cast<GaussianMode>(trial % 3);
    const auto fit_data = correlated_features(6, 3, 2, 2, random_matrix(3, 3, rng), rng);
    const auto g = fit_level(fit_data, mode);
    auto x = gadft::testing::random_tensor({2, 3, 2, 2}, rng, -2.0, 2.0);
    auto check = gadft::testing::check_gradients(
        [&g](const std::vector<BasicTensor<double>>& in) { return reduce_mean(mahalanobis_map(in[0], g)); },
        {x});
    CHECK(check.passed);
    CHECK(check.max_relative <= 1e-3);
  }
}

TEST_CASE("float and double maps agree") {
  Rng rng(2);
  const auto x = correlated_features(5, 3, 2, 2, random_matrix(3, 3, rng), rng);
  const auto g = fit_level(x, GaussianMode::tied);
  const auto ad = mahalanobis_map(x, g);
  const auto af = mahalanobis_map(tensor_cast<float>(x), g);
  for (Index i = 0; i < ad.numel(); ++i) CHECK(af.data()[i] == doctest::Approx(ad.data()[i]).epsilon(1e-5));
}
