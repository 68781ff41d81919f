#pragma once

// Reading optimised embeddings back into vocabulary space, and projecting
// embedding trajectories to 2-D.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "invlab/models.hpp"

namespace invlab {

/// A·B / (‖A‖‖B‖). Zero-norm inputs are an error, never a silent 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: vectors of different length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("cosine of a zero-norm vector is undefined");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct TokenEstimate {
  std::size_t position = 0;
  std::size_t token_id = 0;
  std::string token;
  double score = 0.0;
};

/// Exact top-k vocabulary rows by cosine for each embedding row of a
/// [n x E] tensor (a rank-1 tensor is a single row). Ties go to the lower id.
inline std::vector<std::vector<TokenEstimate>> nearest_tokens(const Tensor& embeddings, const VocabTable& vocab,
                                                              std::size_t k = 1) {
  const std::size_t width = embeddings.rank() == 1 ? embeddings.numel() : embeddings.dim(embeddings.rank() - 1);
  if (width != vocab.width())
    throw ShapeError("embedding width " + std::to_string(width) + " does not match vocabulary width " +
                     std::to_string(vocab.width()));
  if (k == 0) throw ConfigError("k must be at least 1");
  k = std::min(k, vocab.size());
  const std::size_t n = embeddings.numel() / width;
  const std::size_t v = vocab.size();
  const auto& table = vocab.embeddings.values();
  std::vector<double> row_norm(v);
  for (std::size_t r = 0; r < v; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += table[r * width + j] * table[r * width + j];
    if (!(s > 0.0)) throw DomainError("vocabulary row " + std::to_string(r) + " has zero norm");
    row_norm[r] = std::sqrt(s);
  }
  std::vector<std::vector<TokenEstimate>> out(n);
  std::vector<std::pair<double, std::size_t>> scored(v);
  for (std::size_t pos = 0; pos < n; ++pos) {
    auto q = embeddings.data().subspan(pos * width, width);
    for (std::size_t r = 0; r < v; ++r)
      scored[r] = {cosine(q, std::span<const double>(table).subspan(r * width, width)), r};
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(k), scored.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t i = 0; i < k; ++i)
      out[pos].push_back({pos, scored[i].second, vocab.tokens[scored[i].second], scored[i].first});
  }
  return out;
}

struct TrajectoryPoint {
  std::size_t step = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  bool degenerate = false;  // every snapshot identical
};

enum class ProjectionMethod { pca };

/// Mean-centred projection onto the top two principal directions. Each
/// direction's sign is fixed so its first non-zero loading is positive.
inline Trajectory project_trajectory(const std::vector<std::size_t>& steps, const std::vector<Tensor>& snapshots,
                                     ProjectionMethod method = ProjectionMethod::pca) {
  (void)method;
  const std::size_t n = snapshots.size();
  if (n < 2) throw ConfigError("trajectory projection needs at least two checkpoints");
  if (steps.size() != n) throw ShapeError("one step label per snapshot required");
  const std::size_t e = snapshots[0].numel();
  if (e < 2) throw ShapeError("trajectory projection needs embeddings of width >= 2");
  Eigen::MatrixXd X(n, e);
  for (std::size_t i = 0; i < n; ++i) {
    if (snapshots[i].numel() != e) throw ShapeError("snapshots differ in size");
    for (std::size_t j = 0; j < e; ++j) X(i, j) = snapshots[i][j];
  }
  X.rowwise() -= X.colwise().mean();
  Trajectory out;
  for (std::size_t i = 0; i < n; ++i) out.points.push_back({steps[i], 0.0, 0.0});
  if (X.cwiseAbs().maxCoeff() == 0.0) {
    out.degenerate = true;
    return out;
  }
  // Eigen-decompose the n x n Gram matrix; n (checkpoints) is usually far
  // smaller than the embedding width.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(X * X.transpose());
  const auto& vals = eig.eigenvalues();  // ascending
  const double top = std::max(vals(n - 1), 0.0);
  for (std::size_t c = 0; c < 2 && c < n; ++c) {
    const double lambda = vals(static_cast<long>(n - 1 - c));
    if (!(lambda > 1e-12 * top) || lambda <= 0.0) continue;
    Eigen::VectorXd u = eig.eigenvectors().col(static_cast<long>(n - 1 - c));
    Eigen::VectorXd loading = X.transpose() * u;  // principal direction (unnormalised)
    double sign = 1.0;
    for (long j = 0; j < loading.size(); ++j) {
      if (std::abs(loading(j)) > 1e-12 * loading.cwiseAbs().maxCoeff()) {
        sign = loading(j) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    loading *= sign / loading.norm();
    Eigen::VectorXd coords = X * loading;
    for (std::size_t i = 0; i < n; ++i) (c == 0 ? out.points[i].x : out.points[i].y) = coords(static_cast<long>(i));
  }
  return out;
}

}  // namespace invlab
