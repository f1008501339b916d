#include "hmix/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "hmix/error.hpp"

namespace hmix {

std::size_t Hierarchy::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown vertex '" + id + "'");
  return it->second;
}

std::vector<std::vector<std::size_t>> Hierarchy::levels_bottom_up() const {
  std::vector<std::vector<std::size_t>> out(max_level_ + 1);
  for (std::size_t i = 0; i < vertices_.size(); ++i) out[max_level_ - levels_[i]].push_back(i);
  return out;
}

Hierarchy build_hierarchy(std::span<const Edge> edges, std::span<const std::string> isolated) {
  // First-appearance order over the edge list, then any extra declared vertices.
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> appearance;
  auto see = [&](const std::string& id) {
    if (id.empty()) throw DataError("empty vertex id");
    if (appearance.emplace(id, order.size()).second) order.push_back(id);
  };
  for (const auto& e : edges) {
    if (e.sign != 1 && e.sign != -1) {
      throw DataError("edge " + e.parent + "->" + e.child + " has sign " + std::to_string(e.sign) +
                      "; expected -1 or +1");
    }
    see(e.parent);
    see(e.child);
  }
  for (const auto& id : isolated) see(id);
  if (order.empty()) throw DataError("hierarchy has no vertices");

  const std::size_t n = order.size();
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> parent(n, none);
  std::vector<std::vector<ChildRef>> children(n);
  for (const auto& e : edges) {
    const std::size_t p = appearance.at(e.parent);
    const std::size_t c = appearance.at(e.child);
    if (p == c) throw DataError("cycle detected: self-loop on '" + e.parent + "'");
    if (parent[c] != none) {
      throw DataError("vertex '" + e.child + "' has two parents ('" + order[parent[c]] + "' and '" + e.parent +
                      "'); only trees are supported");
    }
    parent[c] = p;
    children[p].push_back({c, e.sign});
  }

  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i)
    if (parent[i] == none) roots.push_back(i);
  if (roots.empty()) throw DataError("cycle detected: no root vertex");
  if (roots.size() > 1) {
    throw DataError("multiple roots ('" + order[roots[0]] + "', '" + order[roots[1]] + "', ...)");
  }

  std::vector<std::size_t> level(n, none);
  std::deque<std::size_t> queue{roots[0]};
  level[roots[0]] = 0;
  std::size_t max_level = 0;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (const auto& c : children[v]) {
      level[c.index] = level[v] + 1;
      max_level = std::max(max_level, level[c.index]);
      queue.push_back(c.index);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (level[i] == none) throw DataError("cycle detected involving '" + order[i] + "'");

  // Row order: aggregated vertices by (level, appearance), then leaves by appearance.
  std::vector<std::size_t> aggregated;
  std::vector<std::size_t> leaf_ids;
  for (std::size_t i = 0; i < n; ++i) (children[i].empty() ? leaf_ids : aggregated).push_back(i);
  std::stable_sort(aggregated.begin(), aggregated.end(),
                   [&](std::size_t a, std::size_t b) { return level[a] < level[b]; });
  std::vector<std::size_t> row_of_old(n);
  std::vector<std::size_t> old_of_row;
  old_of_row.reserve(n);
  for (auto i : aggregated) old_of_row.push_back(i);
  for (auto i : leaf_ids) old_of_row.push_back(i);
  for (std::size_t r = 0; r < n; ++r) row_of_old[old_of_row[r]] = r;

  Hierarchy h;
  h.vertices_.reserve(n);
  h.levels_.resize(n);
  h.children_.resize(n);
  h.parents_.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t old = old_of_row[r];
    h.vertices_.push_back(order[old]);
    h.index_.emplace(order[old], r);
    h.levels_[r] = level[old];
    h.parents_[r] = parent[old] == none ? n : row_of_old[parent[old]];
    for (const auto& c : children[old]) h.children_[r].push_back({row_of_old[c.index], c.sign});
  }
  for (auto i : leaf_ids) h.leaves_.push_back(order[i]);
  h.edges_.assign(edges.begin(), edges.end());
  h.root_ = row_of_old[roots[0]];
  h.max_level_ = max_level;
  return h;
}

SummingMatrix summing_matrix(const Hierarchy& h) {
  const std::size_t n = h.size();
  const std::size_t m = h.leaf_count();
  const std::size_t k = h.aggregate_count();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) s(static_cast<Eigen::Index>(k + j), static_cast<Eigen::Index>(j)) = 1.0;
  // Aggregated rows are sorted by level, so walking them backwards sees children first.
  for (std::size_t r = k; r-- > 0;) {
    for (const auto& c : h.children(r)) {
      s.row(static_cast<Eigen::Index>(r)) += c.sign * s.row(static_cast<Eigen::Index>(c.index));
    }
  }
  return {std::move(s), h.leaves()};
}

Eigen::VectorXd aggregate(const Hierarchy& h, const Eigen::VectorXd& leaf_values) {
  if (static_cast<std::size_t>(leaf_values.size()) != h.leaf_count()) {
    throw DataError("aggregate: expected " + std::to_string(h.leaf_count()) + " leaf values, got " +
                    std::to_string(leaf_values.size()));
  }
  const std::size_t k = h.aggregate_count();
  Eigen::VectorXd out(static_cast<Eigen::Index>(h.size()));
  out.tail(leaf_values.size()) = leaf_values;
  // Recursive descent from each aggregated vertex; depth is small.
  auto value_of = [&](auto&& self, std::size_t v) -> double {
    if (h.is_leaf(v)) return leaf_values(static_cast<Eigen::Index>(v - k));
    double sum = 0.0;
    for (const auto& c : h.children(v)) sum += c.sign * self(self, c.index);
    return sum;
  };
  for (std::size_t r = 0; r < k; ++r) out(static_cast<Eigen::Index>(r)) = value_of(value_of, r);
  return out;
}

double coherent_loss(const Hierarchy& h, const Eigen::MatrixXd& forecasts) {
  if (static_cast<std::size_t>(forecasts.rows()) != h.size()) {
    throw DataError("coherent_loss: expected " + std::to_string(h.size()) + " rows, got " +
                    std::to_string(forecasts.rows()));
  }
  const Eigen::Index horizon = forecasts.cols();
  if (horizon == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < h.aggregate_count(); ++r) {
    Eigen::RowVectorXd gap = forecasts.row(static_cast<Eigen::Index>(r));
    for (const auto& c : h.children(r)) gap -= c.sign * forecasts.row(static_cast<Eigen::Index>(c.index));
    total += gap.cwiseAbs().sum();
  }
  return total / static_cast<double>(horizon);
}

double coherent_loss(const Hierarchy& h, const std::map<std::string, std::vector<double>>& forecasts) {
  std::size_t horizon = 0;
  bool first = true;
  for (const auto& id : h.vertices()) {
    auto it = forecasts.find(id);
    if (it == forecasts.end()) throw DataError("coherent_loss: missing vertex '" + id + "'");
    if (first) {
      horizon = it->second.size();
      first = false;
    } else if (it->second.size() != horizon) {
      throw DataError("coherent_loss: length mismatch at vertex '" + id + "'");
    }
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(horizon));
  for (std::size_t r = 0; r < h.size(); ++r) {
    const auto& v = forecasts.at(h.id(r));
    for (std::size_t t = 0; t < horizon; ++t) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = v[t];
  }
  return coherent_loss(h, m);
}

FeasibilityReport coherency_feasible(const Eigen::MatrixXd& expert_forecasts, const Eigen::VectorXd& truth) {
  if (expert_forecasts.cols() == 0) throw DataError("coherency_feasible: empty expert list");
  if (expert_forecasts.rows() != truth.size()) {
    throw DataError("coherency_feasible: forecast rows and truth length differ");
  }
  FeasibilityReport report;
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(expert_forecasts.rows(), expert_forecasts.cols());
  for (Eigen::Index v = 0; v < expert_forecasts.rows(); ++v) {
    Eigen::Index lo = 0;
    Eigen::Index hi = 0;
    const double lo_val = expert_forecasts.row(v).minCoeff(&lo);
    const double hi_val = expert_forecasts.row(v).maxCoeff(&hi);
    const double y = truth(v);
    if (!(y >= lo_val && y <= hi_val)) {
      report.violating_vertices.push_back(static_cast<std::size_t>(v));
      continue;
    }
    if (hi_val == lo_val) {
      weights(v, lo) = 1.0;
      continue;
    }
    const double w_hi = (y - lo_val) / (hi_val - lo_val);
    weights(v, hi) = w_hi;
    weights(v, lo) = 1.0 - w_hi;
  }
  report.feasible = report.violating_vertices.empty();
  if (report.feasible) report.weights = std::move(weights);
  return report;
}

}  // namespace hmix
