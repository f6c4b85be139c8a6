#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "actseg/error.hpp"
#include "actseg/graph.hpp"
#include "oracles.hpp"

using namespace actseg;

TEST_SUITE_BEGIN("graph");

TEST_CASE("build_skeleton_graph validates and deduplicates") {
  const std::vector<Edge> one{{0, 1}};
  const auto g = build_skeleton_graph(2, one);
  CHECK(g.num_joints() == 2);
  CHECK(g.edges().size() == 1);

  CHECK(build_skeleton_graph(1, std::vector<Edge>{}).num_joints() == 1);
  CHECK_THROWS_AS(build_skeleton_graph(3, std::vector<Edge>{{0, 3}}), InvalidGraph);
  CHECK_THROWS_AS(build_skeleton_graph(3, std::vector<Edge>{{1, 1}}), InvalidGraph);
  CHECK_THROWS_AS(build_skeleton_graph(3, std::vector<Edge>{{-1, 1}}), InvalidGraph);

  const auto dup = build_skeleton_graph(3, std::vector<Edge>{{0, 1}, {1, 0}, {0, 1}, {2, 1}});
  CHECK(dup.edges().size() == 2);
}

TEST_CASE("uniform normalization on tiny graphs") {
  const auto two = normalized_adjacency(build_skeleton_graph(2, std::vector<Edge>{{0, 1}}));
  REQUIRE(two.matrices.size() == 1);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(two.matrices[0](i, j) == doctest::Approx(0.5).epsilon(1e-15));

  const auto single = normalized_adjacency(build_skeleton_graph(1, std::vector<Edge>{}));
  CHECK(single.matrices[0](0, 0) == 1.0);
}

TEST_CASE("3-node path matches hand-computed D^-1/2 (A+I) D^-1/2") {
  // Degrees of A+I are 2, 3, 2.
  const double s6 = 1.0 / std::sqrt(6.0);
  const double expected[3][3] = {{0.5, s6, 0.0}, {s6, 1.0 / 3.0, s6}, {0.0, s6, 0.5}};
  const auto adj = normalized_adjacency(build_skeleton_graph(3, std::vector<Edge>{{0, 1}, {1, 2}}));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(std::abs(adj.matrices[0](i, j) - expected[i][j]) < 1e-15);
}

TEST_CASE("distance partition separates self and neighbours") {
  const auto adj = normalized_adjacency(build_skeleton_graph(3, std::vector<Edge>{{0, 1}, {1, 2}}),
                                        AdjacencyStrategy::distance);
  REQUIRE(adj.matrices.size() == 2);
  CHECK(adj.matrices[0].isApprox(Eigen::MatrixXd::Identity(3, 3)));
  // Neighbour degrees 1, 2, 1.
  const double h = 1.0 / std::sqrt(2.0);
  CHECK(adj.matrices[1](0, 1) == doctest::Approx(h));
  CHECK(adj.matrices[1](1, 2) == doctest::Approx(h));
  CHECK(adj.matrices[1](0, 2) == 0.0);
  CHECK(adj.matrices[1](1, 1) == 0.0);

  // An isolated joint keeps an all-zero neighbour row.
  const auto iso = normalized_adjacency(build_skeleton_graph(3, std::vector<Edge>{{0, 1}}), AdjacencyStrategy::distance);
  CHECK(iso.matrices[1].row(2).isZero());
}

TEST_CASE("permute_graph examples") {
  const auto path = build_skeleton_graph(3, std::vector<Edge>{{0, 1}, {1, 2}});
  const std::vector<int> id{0, 1, 2};
  CHECK(permute_graph(path, id).edges() == path.edges());
  const std::vector<int> rev{2, 1, 0};
  CHECK(permute_graph(path, rev).edges() == path.edges());
  const auto two = build_skeleton_graph(2, std::vector<Edge>{{0, 1}});
  const std::vector<int> swap{1, 0};
  CHECK(permute_graph(two, swap).edges() == two.edges());
  const std::vector<int> bad{0, 0, 1};
  CHECK_THROWS_AS(permute_graph(path, bad), InvalidPermutation);
  const std::vector<int> short_perm{0, 1};
  CHECK_THROWS_AS(permute_graph(path, short_perm), InvalidPermutation);
}

namespace {

SkeletonGraph random_graph(std::mt19937_64& rng, int v) {
  std::bernoulli_distribution keep(0.35);
  std::vector<Edge> edges;
  for (int i = 0; i < v; ++i)
    for (int j = i + 1; j < v; ++j)
      if (keep(rng)) edges.emplace_back(i, j);
  return build_skeleton_graph(v, edges);
}

}  // namespace

TEST_CASE("normalization commutes with relabeling: A(pg) = P A(g) P^T") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int v = 2 + trial % 7;
    const auto g = random_graph(rng, v);
    std::vector<int> perm(static_cast<std::size_t>(v));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(v, v);
    for (int i = 0; i < v; ++i) p(perm[static_cast<std::size_t>(i)], i) = 1.0;
    for (auto strategy : {AdjacencyStrategy::uniform, AdjacencyStrategy::distance}) {
      const auto a = normalized_adjacency(g, strategy);
      const auto b = normalized_adjacency(permute_graph(g, perm), strategy);
      for (std::size_t m = 0; m < a.matrices.size(); ++m)
        CHECK((b.matrices[m] - p * a.matrices[m] * p.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("normalized matrices: symmetric, nonnegative, spectral radius <= 1") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    const int v = 1 + trial % 10;
    const auto g = random_graph(rng, v);
    for (auto strategy : {AdjacencyStrategy::uniform, AdjacencyStrategy::distance}) {
      for (const auto& m : normalized_adjacency(g, strategy).matrices) {
        CHECK((m - m.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(m.minCoeff() >= 0.0);
        CHECK(oracle::spectral_radius(m) <= 1.0 + 1e-9);
      }
    }
    const auto u = normalized_adjacency(g).matrices[0];
    for (int r = 0; r < v; ++r) {
      const double s = u.row(r).sum();
      CHECK(s > 0.0);
      CHECK(s <= v);
    }
  }
}

TEST_CASE("chain graph and strategy parsing") {
  const auto c = chain_graph(4);
  CHECK(c.edges().size() == 3);
  CHECK(chain_graph(1).edges().empty());
  CHECK(parse_adjacency_strategy("distance") == AdjacencyStrategy::distance);
  CHECK(to_string(AdjacencyStrategy::uniform) == "uniform");
  CHECK_THROWS_AS(parse_adjacency_strategy("spatial"), ConfigError);
}

TEST_SUITE_END();
