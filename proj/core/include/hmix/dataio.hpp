#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hmix/hierarchy.hpp"

namespace hmix {

/// Chronological split indices: train = [0, train_end), validation =
/// [train_end, val_end), test = [val_end, T).
struct Split {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
};

/// 60/20/20 split. Throws DataError when any part would be empty.
Split chronological_split(std::size_t length, double train_fraction = 0.6, double val_fraction = 0.2);

/// Aligned per-vertex series, stored in hierarchy row order.
struct SeriesPanel {
  std::vector<std::string> ids;
  std::vector<std::int64_t> timestamps;
  std::vector<std::vector<double>> values;
  Split split;

  std::size_t length() const { return timestamps.size(); }
  std::size_t row_of(const std::string& id) const;
  const std::vector<double>& series(const std::string& id) const { return values.at(row_of(id)); }
  /// n x T matrix view of the values (copied).
  Eigen::MatrixXd matrix() const;
};

/// Reads `series_id,timestamp,value` rows and aligns them to `h`'s vertex order.
SeriesPanel read_panel_csv(std::istream& in, const Hierarchy& h);
SeriesPanel load_panel_csv(const std::filesystem::path& path, const Hierarchy& h);
void write_panel_csv(std::ostream& out, const SeriesPanel& panel);

/// Structured-text (JSON) hierarchy document:
/// `{"vertices": [...], "edges": [{"parent": .., "child": .., "sign": -1|1}]}`.
/// `sign` defaults to +1.
Hierarchy parse_hierarchy_spec(const std::string& text);
Hierarchy load_hierarchy_spec(const std::filesystem::path& path);
std::string dump_hierarchy_spec(const Hierarchy& h);

/// Overlapping windows of a series. Row r holds x[r .. r+width); its target is
/// x[r+width], which exists for every row except the last.
struct WindowBatch {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd targets;  // length rows() - 1
  std::size_t width = 0;

  std::size_t rows() const { return static_cast<std::size_t>(inputs.rows()); }
  bool has_target(std::size_t row) const { return row + 1 < rows(); }
};

WindowBatch sliding_windows(const std::vector<double>& series, std::size_t width);

/// Deterministic piecewise test function on [0, 1] with a level jump at 0.9.
double piecewise_function(double x);

struct PiecewiseSeries {
  std::vector<double> x;
  std::vector<double> y;
  std::size_t change_index = 0;  // first index with x >= 0.9
};

/// Samples `piecewise_function` on a uniform grid over [0, 1] and adds
/// N(0, noise_sd^2) noise. The reference setting is n = 2000 with variance 0.05.
PiecewiseSeries simulate_piecewise(std::size_t n_samples = 2000, double noise_sd = 0.22360679774997896,
                                   std::uint64_t seed = 0);

/// Seasonal, trending leaf series with AR(1) noise, aggregated through `h`.
/// The aggregated rows are exact signed sums of the leaves.
SeriesPanel simulate_hierarchical(const Hierarchy& h, std::size_t length, std::uint64_t seed,
                                  std::size_t season = 12);

/// The seven-vertex, three-level tree used throughout the examples.
Hierarchy three_level_tree();

}  // namespace hmix
