#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "invlab/interpret.hpp"

using namespace invlab;

namespace {

Tensor gaussian(std::vector<std::size_t> shape, std::mt19937_64& g) {
  std::normal_distribution<double> n(0.0);
  std::size_t count = 1;
  for (auto s : shape) count *= s;
  std::vector<double> v(count);
  for (auto& x : v) x = n(g);
  return Tensor(std::move(shape), std::move(v));
}

VocabTable vocab_of(std::size_t v, std::size_t e, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  VocabTable t;
  for (std::size_t i = 0; i < v; ++i) t.tokens.push_back("tok" + std::to_string(i));
  t.embeddings = gaussian({v, e}, g);
  return t;
}

// Straight double loop: the full score list for one query, sorted by the
// documented ordering.
std::vector<std::pair<double, std::size_t>> brute_force(std::span<const double> q, const VocabTable& vocab) {
  const std::size_t e = vocab.width();
  std::vector<std::pair<double, std::size_t>> out;
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    double dot = 0.0, nq = 0.0, nr = 0.0;
    for (std::size_t j = 0; j < e; ++j) {
      const double a = q[j], b = vocab.embeddings.at(r, j);
      dot += a * b;
      nq += a * a;
      nr += b * b;
    }
    out.push_back({dot / (std::sqrt(nq) * std::sqrt(nr)), r});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return out;
}

double dist(const TrajectoryPoint& a, const TrajectoryPoint& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST(Cosine, Examples) {
  const std::vector<double> v{0.3, -1.2, 4.0};
  EXPECT_NEAR(cosine(v, v), 1.0, 1e-15);
  EXPECT_EQ(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_NEAR(cosine(std::vector<double>{1, 0}, std::vector<double>{1, 1}), 0.70710678, 1e-8);
  EXPECT_NEAR(cosine(std::vector<double>{1, 0}, std::vector<double>{-2, 0}), -1.0, 1e-15);
}

TEST(Cosine, ZeroNormIsAnError) {
  EXPECT_THROW(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 1}), DomainError);
  EXPECT_THROW(cosine(std::vector<double>{1, 1}, std::vector<double>{0, 0}), DomainError);
  EXPECT_THROW(cosine(std::vector<double>{1}, std::vector<double>{1, 1}), ShapeError);
}

TEST(NearestTokens, SelfMatch) {
  auto vocab = vocab_of(50, 12, 1);
  for (std::size_t j : {0u, 17u, 49u}) {
    Tensor row({12}, std::vector<double>(vocab.embeddings.data().begin() + j * 12,
                                         vocab.embeddings.data().begin() + (j + 1) * 12));
    auto est = nearest_tokens(row, vocab, 1);
    ASSERT_EQ(est.size(), 1u);
    EXPECT_EQ(est[0][0].token_id, j);
    EXPECT_EQ(est[0][0].token, vocab.tokens[j]);
    EXPECT_NEAR(est[0][0].score, 1.0, 1e-12);
  }
}

TEST(NearestTokens, MatchesBruteForceScan) {
  auto vocab = vocab_of(1000, 16, 2);
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto q = gaussian({10, 16}, g);
    const std::size_t k = 1 + static_cast<std::size_t>(trial) * 3;
    auto est = nearest_tokens(q, vocab, k);
    ASSERT_EQ(est.size(), 10u);
    for (std::size_t pos = 0; pos < 10; ++pos) {
      auto ref = brute_force(q.data().subspan(pos * 16, 16), vocab);
      ASSERT_EQ(est[pos].size(), k);
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_EQ(est[pos][i].position, pos);
        EXPECT_EQ(est[pos][i].token_id, ref[i].second);
        EXPECT_NEAR(est[pos][i].score, ref[i].first, 1e-12);
      }
    }
  }
}

TEST(NearestTokens, RankingIsScaleInvariant) {
  auto vocab = vocab_of(300, 8, 4);
  std::mt19937_64 g(5);
  auto q = gaussian({6, 8}, g);
  auto a = nearest_tokens(q, vocab, 20);
  for (double s : {7.0, 1e-3, 1e5}) {
    std::vector<double> scaled(q.data().begin(), q.data().end());
    for (auto& x : scaled) x *= s;
    auto b = nearest_tokens(Tensor({6, 8}, scaled), vocab, 20);
    for (std::size_t pos = 0; pos < 6; ++pos)
      for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a[pos][i].token_id, b[pos][i].token_id);
  }
}

TEST(NearestTokens, TiesGoToLowerId) {
  VocabTable v{{"a", "b", "c"}, Tensor({3, 2}, {0, 1, 2, 0, 1, 0})};
  auto est = nearest_tokens(Tensor({2}, {1, 0}), v, 3);
  EXPECT_EQ(est[0][0].token_id, 1u);
  EXPECT_EQ(est[0][1].token_id, 2u);
  EXPECT_EQ(est[0][2].token_id, 0u);
}

TEST(NearestTokens, Errors) {
  auto vocab = vocab_of(10, 4, 6);
  EXPECT_THROW(nearest_tokens(Tensor::zeros({2, 5}), vocab), ShapeError);
  EXPECT_THROW(nearest_tokens(Tensor::full({2, 4}, 1.0), vocab, 0), ConfigError);
  EXPECT_THROW(nearest_tokens(Tensor::zeros({1, 4}), vocab), DomainError);
  EXPECT_EQ(nearest_tokens(Tensor::full({1, 4}, 1.0), vocab, 50)[0].size(), 10u);
}

TEST(Trajectory, TwoPointsAreSymmetric) {
  auto t = project_trajectory({0, 10}, {Tensor({3}, {1, 2, 3}), Tensor({3}, {3, 2, -1})});
  ASSERT_EQ(t.points.size(), 2u);
  EXPECT_FALSE(t.degenerate);
  EXPECT_NEAR(t.points[0].x, -t.points[1].x, 1e-12);
  EXPECT_NEAR(t.points[0].y, 0.0, 1e-12);
  EXPECT_NEAR(t.points[1].y, 0.0, 1e-12);
  EXPECT_NEAR(std::abs(t.points[0].x - t.points[1].x), std::sqrt(4.0 + 0.0 + 16.0), 1e-12);
  EXPECT_EQ(t.points[1].step, 10u);
}

TEST(Trajectory, PlanarDataIsAnIsometry) {
  std::mt19937_64 g(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t e = 3 + trial % 10, n = 3 + trial % 7;
    // Orthonormal 2-frame in R^e via Gram-Schmidt, plus an offset.
    auto basis = gaussian({2, e}, g);
    Eigen::MatrixXd b(2, e);
    for (std::size_t j = 0; j < e; ++j) b(0, j) = basis.at(0, j), b(1, j) = basis.at(1, j);
    b.row(0).normalize();
    b.row(1) -= b.row(1).dot(b.row(0)) * b.row(0);
    b.row(1).normalize();
    auto offset = gaussian({e}, g);
    auto planar = gaussian({n, 2}, g);
    std::vector<Tensor> snaps;
    std::vector<std::size_t> steps;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(e);
      for (std::size_t j = 0; j < e; ++j) v[j] = offset[j] + planar.at(i, 0) * b(0, j) + planar.at(i, 1) * b(1, j);
      snaps.emplace_back(std::vector<std::size_t>{e}, v);
      steps.push_back(i * 5);
    }
    auto t = project_trajectory(steps, snaps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = std::hypot(planar.at(i, 0) - planar.at(j, 0), planar.at(i, 1) - planar.at(j, 1));
        EXPECT_NEAR(dist(t.points[i], t.points[j]), d, 1e-9);
      }
  }
}

TEST(Trajectory, CentredAndDeterministic) {
  std::mt19937_64 g(8);
  std::vector<Tensor> snaps;
  for (int i = 0; i < 6; ++i) snaps.push_back(gaussian({20}, g));
  const std::vector<std::size_t> steps{0, 1, 2, 3, 4, 5};
  auto a = project_trajectory(steps, snaps);
  auto b = project_trajectory(steps, snaps);
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a.points[i].x, b.points[i].x);
    EXPECT_EQ(a.points[i].y, b.points[i].y);
    sx += a.points[i].x;
    sy += a.points[i].y;
  }
  EXPECT_NEAR(sx, 0.0, 1e-10);
  EXPECT_NEAR(sy, 0.0, 1e-10);
}

TEST(Trajectory, IdenticalCheckpointsAreDegenerate) {
  Tensor x({4}, {1, 2, 3, 4});
  auto t = project_trajectory({0, 5, 9}, {x, x, x});
  EXPECT_TRUE(t.degenerate);
  for (const auto& p : t.points) {
    EXPECT_EQ(p.x, 0.0);
    EXPECT_EQ(p.y, 0.0);
  }
}

TEST(Trajectory, Errors) {
  EXPECT_THROW(project_trajectory({0}, {Tensor::full({3}, 1.0)}), ConfigError);
  EXPECT_THROW(project_trajectory({0, 1}, {Tensor::full({1}, 1.0), Tensor::zeros({1})}), ShapeError);
  EXPECT_THROW(project_trajectory({0, 1}, {Tensor::full({3}, 1.0), Tensor::zeros({4})}), ShapeError);
  EXPECT_THROW(project_trajectory({0}, {Tensor::full({3}, 1.0), Tensor::zeros({3})}), ShapeError);
}
