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

#include "gadft/gaussian.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace gadft {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(GaussianMode mode) {
  switch (mode) {
    case GaussianMode::global: return "global";
    case GaussianMode::tied: return "tied";
    case GaussianMode::local: return "local";
  }
  return "?";
}

GaussianMode parse_gaussian_mode(std::string_view name) {
  if (name == "global") return GaussianMode::global;
  if (name == "tied") return GaussianMode::tied;
  if (name == "local") return GaussianMode::local;
  throw ConfigError("unknown gaussian mode '" + std::string(name) + "'");
}

MatrixXd cholesky_factor(const MatrixXd& covariance) {
  if (covariance.rows() != covariance.cols()) throw DimensionError("covariance must be square");
  Eigen::LLT<MatrixXd> llt(covariance);
  if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) {
    return llt.matrixL();
  }
  const double mean_diag = covariance.diagonal().mean();
  const double jitter = std::max(1e-6 * mean_diag, 1e-9);
  MatrixXd loaded = covariance;
  loaded.diagonal().array() += jitter;
  llt.compute(loaded);
  if (llt.info() != Eigen::Success) {
    throw EstimationError("covariance is not positive definite even after diagonal loading");
  }
  return llt.matrixL();
}

LevelGaussian LevelGaussian::from_moments(GaussianMode mode, Index height, Index width,
                                          MatrixXd means, std::vector<MatrixXd> covariances) {
  LevelGaussian g;
  g.mode = mode;
  g.height = height;
  g.width = width;
  g.channels = means.cols();
  const Index mean_rows = mode == GaussianMode::global ? 1 : height * width;
  const std::size_t cov_count = mode == GaussianMode::local ? static_cast<std::size_t>(height * width) : 1;
  if (means.rows() != mean_rows || covariances.size() != cov_count) {
    throw DimensionError("moment counts do not match the gaussian mode");
  }
  for (const auto& c : covariances) {
    if (c.rows() != g.channels || c.cols() != g.channels) {
      throw DimensionError("covariance size differs from the mean dimension");
    }
    g.factors.push_back(cholesky_factor(c));
  }
  g.means = std::move(means);
  g.covariances = std::move(covariances);
  g.shrinkage.assign(g.covariances.size(), 0.0);
  return g;
}

namespace {

// Rows n*HW + p hold the feature vector of sample n at location p.
template <typename T>
MatrixXd location_rows(const BasicTensor<T>& features) {
  const Index n = features.dim(0), c = features.dim(1), hw = features.dim(2) * features.dim(3);
  MatrixXd rows(n * hw, c);
  const T* x = features.raw();
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < hw; ++p) rows(s * hw + p, ch) = x[(s * c + ch) * hw + p];
  return rows;
}

template <typename T>
void check_level(const BasicTensor<T>& features, const LevelGaussian& g) {
  if (features.rank() != 4) {
    throw ShapeError("level features must be [N,C,H,W], got " + shape_string(features.shape()));
  }
  if (features.dim(1) != g.channels || features.dim(2) != g.height || features.dim(3) != g.width) {
    throw DimensionError("features " + shape_string(features.shape()) + " do not match gaussian [" +
                         std::to_string(g.channels) + ", " + std::to_string(g.height) + ", " +
                         std::to_string(g.width) + "]");
  }
}

// Columns n*HW + p hold L^-1 (x - mu) for sample n at location p.
template <typename T>
MatrixXd whitened_columns(const BasicTensor<T>& features, const LevelGaussian& g) {
  check_level(features, g);
  const Index n = features.dim(0), c = g.channels, hw = g.locations();
  MatrixXd z(c, n * hw);
  const T* x = features.raw();
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) {
      const T* src = x + (s * c + ch) * hw;
      for (Index p = 0; p < hw; ++p) {
        z(ch, s * hw + p) = static_cast<double>(src[p]) -
                            g.means(g.mode == GaussianMode::global ? 0 : p, ch);
      }
    }
  if (g.mode != GaussianMode::local) {
    g.factors[0].triangularView<Eigen::Lower>().solveInPlace(z);
  } else {
    MatrixXd block(c, n);
    for (Index p = 0; p < hw; ++p) {
      for (Index s = 0; s < n; ++s) block.col(s) = z.col(s * hw + p);
      g.factors[static_cast<std::size_t>(p)].triangularView<Eigen::Lower>().solveInPlace(block);
      for (Index s = 0; s < n; ++s) z.col(s * hw + p) = block.col(s);
    }
  }
  return z;
}

}  // namespace

template <typename T>
LevelGaussian fit_level(const BasicTensor<T>& features, GaussianMode mode) {
  if (features.rank() != 4 || features.dim(0) < 1) {
    throw ShapeError("level features must be non-empty [N,C,H,W]");
  }
  const Index n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const Index hw = h * w;
  if (mode == GaussianMode::local && n < 2) {
    throw EstimationError("local gaussians need at least two images per location");
  }
  MatrixXd rows = location_rows(features);
  LevelGaussian g;
  g.mode = mode;
  g.channels = c;
  g.height = h;
  g.width = w;
  auto keep = [&g](ShrinkageEstimate est) {
    g.degenerate = g.degenerate || est.degenerate;
    g.shrinkage.push_back(est.shrinkage);
    g.factors.push_back(cholesky_factor(est.covariance));
    g.covariances.push_back(std::move(est.covariance));
  };
  switch (mode) {
    case GaussianMode::global: {
      g.means = rows.colwise().mean();
      keep(ledoit_wolf(rows));
      break;
    }
    case GaussianMode::tied: {
      g.means = MatrixXd::Zero(hw, c);
      for (Index s = 0; s < n; ++s) g.means += rows.middleRows(s * hw, hw);
      g.means /= static_cast<double>(n);
      for (Index s = 0; s < n; ++s) rows.middleRows(s * hw, hw) -= g.means;
      keep(ledoit_wolf(rows));
      break;
    }
    case GaussianMode::local: {
      g.means = MatrixXd::Zero(hw, c);
      MatrixXd samples(n, c);
      for (Index p = 0; p < hw; ++p) {
        for (Index s = 0; s < n; ++s) samples.row(s) = rows.row(s * hw + p);
        g.means.row(p) = samples.colwise().mean();
        keep(ledoit_wolf(samples));
      }
      break;
    }
  }
  return g;
}

template <typename T>
GaussianModel fit_gaussian(const std::vector<LevelFeatures<T>>& features, GaussianMode mode) {
  if (features.empty()) throw EstimationError("no level features to fit");
  GaussianModel model;
  model.mode = mode;
  for (const auto& lf : features) {
    model.level_ids.push_back(lf.level);
    model.levels.push_back(fit_level(lf.features, mode));
  }
  return model;
}

template <typename T>
BasicTensor<T> mahalanobis_map(const BasicTensor<T>& features, const LevelGaussian& gaussian) {
  auto z = std::make_shared<MatrixXd>(whitened_columns(features, gaussian));
  const Index n = features.dim(0), c = gaussian.channels, hw = gaussian.locations();
  auto dist = std::make_shared<VectorXd>(z->colwise().norm().transpose());
  std::vector<T> out(static_cast<std::size_t>(n * hw));
  for (Index j = 0; j < n * hw; ++j) out[j] = static_cast<T>((*dist)(j));
  auto factors = std::make_shared<std::vector<MatrixXd>>(gaussian.factors);
  const bool local = gaussian.mode == GaussianMode::local;
  return make_result<T>(
      {n, gaussian.height, gaussian.width}, std::move(out), {features},
      [=](std::span<const T> g, std::span<std::vector<T>* const> gin) {
        // d||L^-1 (x - mu)|| / dx = L^-T z / ||z||
        MatrixXd y(c, n * hw);
        for (Index j = 0; j < n * hw; ++j) {
          const double d = (*dist)(j);
          y.col(j) = d > 0.0 ? VectorXd(z->col(j) * (static_cast<double>(g[j]) / d))
                             : VectorXd::Zero(c);
        }
        if (!local) {
          (*factors)[0].transpose().triangularView<Eigen::Upper>().solveInPlace(y);
        } else {
          MatrixXd block(c, n);
          for (Index p = 0; p < hw; ++p) {
            for (Index s = 0; s < n; ++s) block.col(s) = y.col(s * hw + p);
            (*factors)[static_cast<std::size_t>(p)].transpose().triangularView<Eigen::Upper>().solveInPlace(block);
            for (Index s = 0; s < n; ++s) y.col(s * hw + p) = block.col(s);
          }
        }
        auto& gx = *gin[0];
        for (Index s = 0; s < n; ++s)
          for (Index ch = 0; ch < c; ++ch)
            for (Index p = 0; p < hw; ++p) gx[(s * c + ch) * hw + p] += static_cast<T>(y(ch, s * hw + p));
      });
}

template <typename T>
BasicTensor<T> whiten(const BasicTensor<T>& features, const LevelGaussian& gaussian) {
  const MatrixXd z = whitened_columns(features, gaussian);
  const Index n = features.dim(0), c = gaussian.channels, hw = gaussian.locations();
  BasicTensor<T> out(features.shape());
  auto o = out.mutable_data();
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < hw; ++p) o[(s * c + ch) * hw + p] = static_cast<T>(z(ch, s * hw + p));
  return out;
}

double gaussian_log_density(const VectorXd& x, const LevelGaussian& gaussian, Index location) {
  if (x.size() != gaussian.channels) throw DimensionError("point dimension differs from gaussian");
  if (location < 0 || location >= gaussian.locations()) throw DimensionError("location out of range");
  const MatrixXd& l = gaussian.factor_at(location);
  const VectorXd z = l.triangularView<Eigen::Lower>().solve(x - gaussian.mean_at(location));
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double dim = static_cast<double>(gaussian.channels);
  return -0.5 * (dim * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

template LevelGaussian fit_level(const BasicTensor<float>&, GaussianMode);
template LevelGaussian fit_level(const BasicTensor<double>&, GaussianMode);
template GaussianModel fit_gaussian(const std::vector<LevelFeatures<float>>&, GaussianMode);
template GaussianModel fit_gaussian(const std::vector<LevelFeatures<double>>&, GaussianMode);
template BasicTensor<float> mahalanobis_map(const BasicTensor<float>&, const LevelGaussian&);
template BasicTensor<double> mahalanobis_map(const BasicTensor<double>&, const LevelGaussian&);
template BasicTensor<float> whiten(const BasicTensor<float>&, const LevelGaussian&);
template BasicTensor<double> whiten(const BasicTensor<double>&, const LevelGaussian&);

}  // namespace gadft
