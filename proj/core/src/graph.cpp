#include "actseg/graph.hpp"

#include <algorithm>
#include <cmath>

#include "actseg/error.hpp"

namespace actseg {

Eigen::MatrixXd SkeletonGraph::adjacency() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(num_joints_, num_joints_);
  for (auto [i, j] : edges_) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

std::string to_string(AdjacencyStrategy s) {
  return s == AdjacencyStrategy::uniform ? "uniform" : "distance";
}

AdjacencyStrategy parse_adjacency_strategy(const std::string& s) {
  if (s == "uniform") return AdjacencyStrategy::uniform;
  if (s == "distance") return AdjacencyStrategy::distance;
  throw ConfigError("unknown adjacency strategy '" + s + "'");
}

SkeletonGraph build_skeleton_graph(int num_joints, std::span<const Edge> edges) {
  if (num_joints < 1) throw InvalidGraph("num_joints must be >= 1");
  SkeletonGraph g;
  g.num_joints_ = num_joints;
  g.edges_.reserve(edges.size());
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= num_joints || j >= num_joints)
      throw InvalidGraph("edge (" + std::to_string(i) + "," + std::to_string(j) +
                         ") out of range for " + std::to_string(num_joints) + " joints");
    if (i == j) throw InvalidGraph("self-loop edge (" + std::to_string(i) + "," + std::to_string(j) + ")");
    g.edges_.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());
  return g;
}

namespace {

// D^-1/2 M D^-1/2 with D = diag(row sums of M); zero-degree rows stay zero.
Eigen::MatrixXd symmetric_normalize(const Eigen::MatrixXd& m) {
  Eigen::VectorXd deg = m.rowwise().sum();
  Eigen::VectorXd inv_sqrt(deg.size());
  for (Eigen::Index i = 0; i < deg.size(); ++i) inv_sqrt(i) = deg(i) > 0 ? 1.0 / std::sqrt(deg(i)) : 0.0;
  return inv_sqrt.asDiagonal() * m * inv_sqrt.asDiagonal();
}

}  // namespace

NormalizedAdjacency normalized_adjacency(const SkeletonGraph& graph, AdjacencyStrategy strategy) {
  const int v = graph.num_joints();
  Eigen::MatrixXd a = graph.adjacency();
  NormalizedAdjacency out;
  out.strategy = strategy;
  if (strategy == AdjacencyStrategy::uniform) {
    out.matrices.push_back(symmetric_normalize(a + Eigen::MatrixXd::Identity(v, v)));
  } else {
    out.matrices.push_back(Eigen::MatrixXd::Identity(v, v));
    out.matrices.push_back(symmetric_normalize(a));
  }
  return out;
}

SkeletonGraph permute_graph(const SkeletonGraph& graph, std::span<const int> perm) {
  const int v = graph.num_joints();
  if (static_cast<int>(perm.size()) != v)
    throw InvalidPermutation("permutation length " + std::to_string(perm.size()) + " != " + std::to_string(v));
  std::vector<bool> seen(v, false);
  for (int p : perm) {
    if (p < 0 || p >= v || seen[p]) throw InvalidPermutation("permutation is not a bijection");
    seen[p] = true;
  }
  std::vector<Edge> mapped;
  mapped.reserve(graph.edges().size());
  for (auto [i, j] : graph.edges()) mapped.emplace_back(perm[i], perm[j]);
  return build_skeleton_graph(v, mapped);
}

SkeletonGraph chain_graph(int num_joints) {
  std::vector<Edge> edges;
  for (int i = 0; i + 1 < num_joints; ++i) edges.emplace_back(i, i + 1);
  return build_skeleton_graph(num_joints, edges);
}

}  // namespace actseg
