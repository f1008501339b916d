#include "hmix/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"

namespace hmix {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line_no) + ": non-numeric value '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& s, std::size_t line_no) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw DataError("line " + std::to_string(line_no) + ": non-integer timestamp '" + s + "'");
  }
  return v;
}

}  // namespace

Split chronological_split(std::size_t length, double train_fraction, double val_fraction) {
  Split s;
  s.train_end = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(length) + 1e-9));
  s.val_end = static_cast<std::size_t>(
      std::floor((train_fraction + val_fraction) * static_cast<double>(length) + 1e-9));
  if (!(s.train_end > 0 && s.train_end < s.val_end && s.val_end < length)) {
    throw DataError("series of length " + std::to_string(length) + " is too short for a train/validation/test split");
  }
  return s;
}

std::size_t SeriesPanel::row_of(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw DataError("panel has no series '" + id + "'");
  return static_cast<std::size_t>(it - ids.begin());
}

Eigen::MatrixXd SeriesPanel::matrix() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(length()));
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t t = 0; t < length(); ++t)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = values[r][t];
  return m;
}

SeriesPanel read_panel_csv(std::istream& in, const Hierarchy& h) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::map<std::string, std::map<std::int64_t, double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (!header_seen) {
      if (!fields.empty() && fields[0].size() >= 3 && fields[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
        fields[0] = fields[0].substr(3);
      }
      if (fields != std::vector<std::string>{"series_id", "timestamp", "value"}) {
        throw DataError("expected header 'series_id,timestamp,value'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) throw DataError("line " + std::to_string(line_no) + ": expected 3 fields");
    if (fields[2].empty() || fields[2] == "NA" || fields[2] == "nan") {
      throw DataError("line " + std::to_string(line_no) + ": missing value");
    }
    const auto ts = parse_int(fields[1], line_no);
    const double value = parse_double(fields[2], line_no);
    if (!rows[fields[0]].emplace(ts, value).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate (series, timestamp) = (" + fields[0] + ", " +
                      fields[1] + ")");
    }
  }
  if (rows.empty()) throw DataError("no rows");

  for (const auto& [id, _] : rows) {
    if (!h.contains(id)) throw DataError("series '" + id + "' is not a vertex of the hierarchy");
  }
  SeriesPanel panel;
  std::set<std::int64_t> reference_stamps;
  for (std::size_t r = 0; r < h.size(); ++r) {
    const auto& id = h.id(r);
    auto it = rows.find(id);
    if (it == rows.end()) throw DataError("missing vertex '" + id + "' in panel");
    std::vector<std::int64_t> stamps;
    std::vector<double> values;
    for (const auto& [ts, v] : it->second) {
      stamps.push_back(ts);
      values.push_back(v);
    }
    if (r == 0) {
      panel.timestamps = stamps;
    } else if (stamps.size() != panel.timestamps.size()) {
      throw DataError("ragged lengths: series '" + id + "' has " + std::to_string(stamps.size()) + " rows, expected " +
                      std::to_string(panel.timestamps.size()));
    } else if (stamps != panel.timestamps) {
      throw DataError("series '" + id + "' has a different timestamp set");
    }
    panel.ids.push_back(id);
    panel.values.push_back(std::move(values));
  }
  panel.split = chronological_split(panel.length());
  return panel;
}

SeriesPanel load_panel_csv(const std::filesystem::path& path, const Hierarchy& h) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file " + path.string());
  return read_panel_csv(in, h);
}

void write_panel_csv(std::ostream& out, const SeriesPanel& panel) {
  out << "series_id,timestamp,value\n";
  char buf[64];
  for (std::size_t r = 0; r < panel.ids.size(); ++r) {
    for (std::size_t t = 0; t < panel.length(); ++t) {
      std::snprintf(buf, sizeof(buf), "%.17g", panel.values[r][t]);
      out << panel.ids[r] << ',' << panel.timestamps[t] << ',' << buf << '\n';
    }
  }
}

Hierarchy parse_hierarchy_spec(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("hierarchy spec parse error: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("hierarchy spec must be an object with 'vertices' and 'edges'");
  std::vector<std::string> vertices;
  std::set<std::string> declared;
  if (doc.contains("vertices")) {
    if (!doc["vertices"].is_array()) throw DataError("'vertices' must be a list");
    for (const auto& v : doc["vertices"]) {
      if (!v.is_string()) throw DataError("vertex ids must be strings");
      const auto id = v.get<std::string>();
      if (!declared.insert(id).second) throw DataError("duplicate vertex id '" + id + "'");
      vertices.push_back(id);
    }
  }
  std::vector<Edge> edges;
  if (doc.contains("edges")) {
    if (!doc["edges"].is_array()) throw DataError("'edges' must be a list");
    for (const auto& e : doc["edges"]) {
      if (!e.is_object() || !e.contains("parent") || !e.contains("child") || !e["parent"].is_string() ||
          !e["child"].is_string()) {
        throw DataError("each edge needs string 'parent' and 'child' fields");
      }
      Edge edge{e["parent"].get<std::string>(), e["child"].get<std::string>(), 1};
      if (e.contains("sign")) {
        if (!e["sign"].is_number_integer()) throw DataError("edge sign must be -1 or 1");
        edge.sign = e["sign"].get<int>();
      }
      for (const auto* id : {&edge.parent, &edge.child}) {
        if (!declared.count(*id)) throw DataError("edge references undeclared vertex '" + *id + "'");
      }
      edges.push_back(std::move(edge));
    }
  }
  return build_hierarchy(edges, vertices);
}

Hierarchy load_hierarchy_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open hierarchy spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_hierarchy_spec(ss.str());
}

std::string dump_hierarchy_spec(const Hierarchy& h) {
  nlohmann::json doc;
  doc["vertices"] = h.vertices();
  doc["edges"] = nlohmann::json::array();
  for (const auto& e : h.edges()) doc["edges"].push_back({{"parent", e.parent}, {"child", e.child}, {"sign", e.sign}});
  return doc.dump(2) + "\n";
}

WindowBatch sliding_windows(const std::vector<double>& series, std::size_t width) {
  if (width == 0) throw DataError("window length must be positive");
  if (series.size() < width) {
    throw DataError("series of length " + std::to_string(series.size()) + " is shorter than window " +
                    std::to_string(width));
  }
  const std::size_t rows = series.size() - width + 1;
  WindowBatch batch;
  batch.width = width;
  batch.inputs.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  batch.targets.resize(static_cast<Eigen::Index>(rows - 1));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c)
      batch.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = series[r + c];
    if (r + 1 < rows) batch.targets(static_cast<Eigen::Index>(r)) = series[r + width];
  }
  return batch;
}

double piecewise_function(double x) {
  if (x < 0.8) return 3.0 + 3.0 * x + 0.1 * std::sin(60.0 * x);
  if (x < 0.9) return 3.0 + 3.0 * x + 0.1 * x * x * std::sin(60.0 * x);
  return 10.0 + 5.0 * std::pow(x, 4) + std::sin(60.0 * x);
}

PiecewiseSeries simulate_piecewise(std::size_t n_samples, double noise_sd, std::uint64_t seed) {
  if (n_samples < 10) throw DataError("simulate_piecewise needs at least 10 samples");
  if (!(noise_sd >= 0.0)) throw DataError("noise_sd must be non-negative");
  PiecewiseSeries out;
  out.x.resize(n_samples);
  out.y.resize(n_samples);
  out.change_index = n_samples;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(n_samples - 1);
    out.x[i] = x;
    const double eps = noise(rng);
    out.y[i] = piecewise_function(x) + noise_sd * eps;
    if (x >= 0.9 && out.change_index == n_samples) out.change_index = i;
  }
  return out;
}

SeriesPanel simulate_hierarchical(const Hierarchy& h, std::size_t length, std::uint64_t seed, std::size_t season) {
  if (length < 3) throw DataError("simulate_hierarchical needs length >= 3");
  if (season == 0) throw DataError("season must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t m = h.leaf_count();
  Eigen::MatrixXd leaves(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(length));
  for (std::size_t j = 0; j < m; ++j) {
    const double level = 20.0 + 20.0 * unif(rng);
    const double trend = 0.01 + 0.04 * unif(rng);
    const double amplitude = 2.0 + 6.0 * unif(rng);
    const double phase = 2.0 * std::numbers::pi * unif(rng);
    const double ar = 0.3 + 0.4 * unif(rng);
    const double sd = 0.5 + 1.0 * unif(rng);
    double noise = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
      noise = ar * noise + sd * gauss(rng);
      const double season_term =
          amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(season) + phase);
      leaves(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) =
          level + trend * static_cast<double>(t) + season_term + noise;
    }
  }

  SeriesPanel panel;
  panel.ids = h.vertices();
  panel.values.assign(h.size(), std::vector<double>(length));
  panel.timestamps.resize(length);
  for (std::size_t t = 0; t < length; ++t) {
    panel.timestamps[t] = static_cast<std::int64_t>(t);
    const Eigen::VectorXd all = aggregate(h, leaves.col(static_cast<Eigen::Index>(t)));
    for (std::size_t r = 0; r < h.size(); ++r) panel.values[r][t] = all(static_cast<Eigen::Index>(r));
  }
  panel.split = chronological_split(length);
  return panel;
}

Hierarchy three_level_tree() {
  const std::vector<Edge> edges{{"v1", "v2", 1}, {"v1", "v3", 1}, {"v2", "v4", 1},
                                {"v2", "v5", 1}, {"v3", "v6", 1}, {"v3", "v7", 1}};
  return build_hierarchy(edges);
}

}  // namespace hmix
