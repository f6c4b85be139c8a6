#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace actseg {

using Edge = std::pair<int, int>;

/// Undirected skeleton graph over `num_joints` nodes. Edges are stored as
/// sorted (lo, hi) pairs without duplicates; self-loops are implicit and
/// added during normalization.
class SkeletonGraph {
 public:
  SkeletonGraph() = default;

  int num_joints() const { return num_joints_; }
  const std::vector<Edge>& edges() const { return edges_; }
  bool self_loops() const { return true; }

  /// Dense 0/1 adjacency without self-loops.
  Eigen::MatrixXd adjacency() const;

  friend bool operator==(const SkeletonGraph&, const SkeletonGraph&) = default;

 private:
  friend SkeletonGraph build_skeleton_graph(int, std::span<const Edge>);
  int num_joints_ = 0;
  std::vector<Edge> edges_;
};

enum class AdjacencyStrategy { uniform, distance };

std::string to_string(AdjacencyStrategy s);
AdjacencyStrategy parse_adjacency_strategy(const std::string& s);

struct NormalizedAdjacency {
  AdjacencyStrategy strategy = AdjacencyStrategy::uniform;
  /// uniform: {D^-1/2 (A+I) D^-1/2}; distance: {I, D_A^-1/2 A D_A^-1/2}.
  std::vector<Eigen::MatrixXd> matrices;

  int num_joints() const { return matrices.empty() ? 0 : static_cast<int>(matrices.front().rows()); }
  std::size_t num_partitions() const { return matrices.size(); }
};

/// Throws InvalidGraph for out-of-range indices or (i,i) entries; duplicate
/// edges, in either orientation, collapse silently.
SkeletonGraph build_skeleton_graph(int num_joints, std::span<const Edge> edges);

NormalizedAdjacency normalized_adjacency(const SkeletonGraph& graph,
                                         AdjacencyStrategy strategy = AdjacencyStrategy::uniform);

/// Relabels joint i as perm[i]. Throws InvalidPermutation unless perm is a
/// bijection on [0, V).
SkeletonGraph permute_graph(const SkeletonGraph& graph, std::span<const int> perm);

/// Path 0-1-...-(V-1); the fallback topology when a config names no edges.
SkeletonGraph chain_graph(int num_joints);

}  // namespace actseg
