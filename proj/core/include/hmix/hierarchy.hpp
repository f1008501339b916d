#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace hmix {

/// A signed parent -> child aggregation edge.
struct Edge {
  std::string parent;
  std::string child;
  int sign = 1;
};

struct ChildRef {
  std::size_t index;
  int sign;
};

/// Signed aggregation tree.
///
/// Vertices are stored in summing-matrix row order: aggregated vertices sorted
/// by (level, first appearance), followed by every leaf in first-appearance
/// order. The bottom `leaf_count()` rows are therefore the leaves. Immutable
/// after construction.
class Hierarchy {
 public:
  const std::vector<std::string>& vertices() const { return vertices_; }
  const std::vector<std::string>& leaves() const { return leaves_; }
  const std::vector<Edge>& edges() const { return edges_; }

  std::size_t size() const { return vertices_.size(); }
  std::size_t leaf_count() const { return leaves_.size(); }
  std::size_t aggregate_count() const { return vertices_.size() - leaves_.size(); }
  std::size_t depth() const { return max_level_; }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  /// Row index of `id`; throws DataError for unknown ids.
  std::size_t index_of(const std::string& id) const;
  const std::string& id(std::size_t index) const { return vertices_.at(index); }

  std::size_t level(std::size_t index) const { return levels_.at(index); }
  std::size_t level(const std::string& id) const { return levels_.at(index_of(id)); }
  bool is_leaf(std::size_t index) const { return children_.at(index).empty(); }
  const std::vector<ChildRef>& children(std::size_t index) const { return children_.at(index); }
  /// Parent row index, or size() for the root.
  std::size_t parent(std::size_t index) const { return parents_.at(index); }
  std::size_t root() const { return root_; }

  /// Row indices grouped by level, deepest level first (bottom-up training order).
  std::vector<std::vector<std::size_t>> levels_bottom_up() const;

 private:
  friend Hierarchy build_hierarchy(std::span<const Edge>, std::span<const std::string>);

  std::vector<std::string> vertices_;
  std::vector<std::string> leaves_;
  std::vector<Edge> edges_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> levels_;
  std::vector<std::vector<ChildRef>> children_;
  std::vector<std::size_t> parents_;
  std::size_t root_ = 0;
  std::size_t max_level_ = 0;
};

/// Builds a tree from signed edges. `isolated` lists vertices that may appear
/// without edges (a single-vertex hierarchy is `build_hierarchy({}, {"v"})`).
/// Throws DataError on cycles, multiple roots, a vertex with two parents or a
/// sign outside {-1, +1}.
Hierarchy build_hierarchy(std::span<const Edge> edges, std::span<const std::string> isolated = {});

/// n x m summing matrix with rows in hierarchy order and columns in leaf order.
struct SummingMatrix {
  Eigen::MatrixXd entries;
  std::vector<std::string> leaf_order;
};

SummingMatrix summing_matrix(const Hierarchy& h);

/// Signed bottom-up sums computed by walking the tree (independent of S).
Eigen::VectorXd aggregate(const Hierarchy& h, const Eigen::VectorXd& leaf_values);

/// Mean over the horizon of the summed L1 gap between every aggregated vertex
/// and the signed sum of its children. `forecasts` is n x H in hierarchy order.
double coherent_loss(const Hierarchy& h, const Eigen::MatrixXd& forecasts);

/// Same as above for id-keyed series; every vertex must be present with equal
/// length.
double coherent_loss(const Hierarchy& h, const std::map<std::string, std::vector<double>>& forecasts);

/// Outcome of the convex-hull coherency check.
struct FeasibilityReport {
  bool feasible = false;
  /// n x L simplex weights per vertex; populated only when feasible.
  Eigen::MatrixXd weights;
  /// Rows whose truth lies outside the experts' [min, max] range.
  std::vector<std::size_t> violating_vertices;
};

/// Checks, vertex by vertex, whether the truth is a convex combination of that
/// vertex's expert forecasts (n x L). When it is, the witness puts all mass on
/// the two bracketing experts, so combining with it reproduces `truth`.
FeasibilityReport coherency_feasible(const Eigen::MatrixXd& expert_forecasts, const Eigen::VectorXd& truth);

}  // namespace hmix
