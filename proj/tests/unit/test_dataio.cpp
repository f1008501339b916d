#include <cmath>
#include <sstream>

#include "doctest.h"
#include "hmix/dataio.hpp"
#include "hmix/error.hpp"

using namespace hmix;

namespace {

std::string panel_text(std::size_t length, std::size_t short_series = 0) {
  std::ostringstream os;
  os << "series_id,timestamp,value\n";
  for (int v = 1; v <= 7; ++v) {
    const std::size_t len = (short_series == static_cast<std::size_t>(v)) ? length - 1 : length;
    for (std::size_t t = 0; t < len; ++t) os << "v" << v << ',' << t << ',' << v * 100 + static_cast<int>(t) << '\n';
  }
  return os.str();
}

}  // namespace

TEST_CASE("chronological split follows 60/20/20") {
  const auto s = chronological_split(100);
  CHECK(s.train_end == 60);
  CHECK(s.val_end == 80);
  CHECK_THROWS_AS(chronological_split(2), DataError);
}

TEST_CASE("panel load: aligned series and split") {
  const auto h = three_level_tree();
  std::istringstream in(panel_text(100));
  const auto p = read_panel_csv(in, h);
  CHECK(p.length() == 100);
  CHECK(p.split.train_end == 60);
  CHECK(p.split.val_end == 80);
  CHECK(p.series("v3")[5] == 305.0);
  CHECK(p.ids == h.vertices());
  // Timestamps are strictly increasing and splits are chronological.
  for (std::size_t t = 1; t < p.length(); ++t) CHECK(p.timestamps[t] > p.timestamps[t - 1]);
  CHECK(p.timestamps[p.split.train_end - 1] < p.timestamps[p.split.train_end]);
  CHECK(p.timestamps[p.split.val_end - 1] < p.timestamps[p.split.val_end]);
}

TEST_CASE("panel load errors") {
  const auto h = three_level_tree();
  auto load = [&](const std::string& text) {
    std::istringstream in(text);
    return read_panel_csv(in, h);
  };
  CHECK_THROWS_WITH_AS(load(""), doctest::Contains("no rows"), DataError);
  CHECK_THROWS_WITH_AS(load("series_id,timestamp,value\n"), doctest::Contains("no rows"), DataError);
  CHECK_THROWS_AS(load(panel_text(20, 3)), DataError);
  std::string bad = panel_text(20);
  bad.replace(bad.find("v1,0,100"), 8, "v1,0,abc");
  CHECK_THROWS_AS(load(bad), DataError);
  std::string dup = panel_text(20) + "v1,0,5\n";
  CHECK_THROWS_AS(load(dup), DataError);
  std::string missing;
  {
    std::istringstream all(panel_text(20));
    std::string line;
    std::ostringstream os;
    while (std::getline(all, line))
      if (line.rfind("v7,", 0) != 0) os << line << '\n';
    missing = os.str();
  }
  CHECK_THROWS_AS(load(missing), DataError);
}

TEST_CASE("panel write/read round trip is exact") {
  const auto h = three_level_tree();
  const auto p = simulate_hierarchical(h, 40, 3);
  std::ostringstream out;
  write_panel_csv(out, p);
  std::istringstream in(out.str());
  const auto q = read_panel_csv(in, h);
  CHECK(q.values == p.values);
  CHECK(q.timestamps == p.timestamps);
}

TEST_CASE("hierarchy spec parsing") {
  const auto h = parse_hierarchy_spec(R"({"vertices": ["v1","v2","v3","v4","v5","v6","v7"],
    "edges": [{"parent":"v1","child":"v2"},{"parent":"v1","child":"v3","sign":-1},
              {"parent":"v2","child":"v4"},{"parent":"v2","child":"v5"},
              {"parent":"v3","child":"v6"},{"parent":"v3","child":"v7"}]})");
  CHECK(h.size() == 7);
  CHECK(h.edges()[0].sign == 1);
  CHECK(h.edges()[1].sign == -1);
  CHECK_THROWS_AS(parse_hierarchy_spec(R"({"vertices":["a"],"edges":[{"parent":"a","child":"b"}]})"), DataError);
  CHECK_THROWS_AS(parse_hierarchy_spec("{not json"), DataError);
  const auto again = parse_hierarchy_spec(dump_hierarchy_spec(h));
  CHECK(summing_matrix(again).entries == summing_matrix(h).entries);
}

TEST_CASE("sliding windows") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const auto b = sliding_windows(x, 3);
  REQUIRE(b.rows() == 3);
  Eigen::MatrixXd expected(3, 3);
  expected << 1, 2, 3, 2, 3, 4, 3, 4, 5;
  CHECK(b.inputs == expected);
  CHECK(b.targets.size() == 2);
  CHECK(b.targets(0) == 4);
  CHECK(b.targets(1) == 5);
  CHECK(b.has_target(1));
  CHECK_FALSE(b.has_target(2));

  const auto whole = sliding_windows(x, 5);
  CHECK(whole.rows() == 1);
  CHECK_FALSE(whole.has_target(0));

  const auto ones = sliding_windows(x, 1);
  CHECK(ones.rows() == 5);
  for (Eigen::Index r = 0; r < 4; ++r) {
    CHECK(ones.inputs(r, 0) == x[static_cast<std::size_t>(r)]);
    CHECK(ones.targets(r) == x[static_cast<std::size_t>(r) + 1]);
  }
  CHECK_THROWS_AS(sliding_windows(x, 0), DataError);
  CHECK_THROWS_AS(sliding_windows(x, 6), DataError);
}

TEST_CASE("sliding windows reassemble the series") {
  std::vector<double> x(37);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.3 * static_cast<double>(i));
  const auto b = sliding_windows(x, 7);
  std::vector<double> rebuilt;
  for (Eigen::Index c = 0; c < 7; ++c) rebuilt.push_back(b.inputs(0, c));
  for (Eigen::Index r = 1; r < b.inputs.rows(); ++r) rebuilt.push_back(b.inputs(r, 6));
  CHECK(rebuilt == x);
}

TEST_CASE("piecewise function branches") {
  CHECK(piecewise_function(0.5) == doctest::Approx(4.5 + 0.1 * std::sin(30.0)).epsilon(1e-14));
  CHECK(piecewise_function(0.95) == doctest::Approx(10.0 + 5.0 * std::pow(0.95, 4) + std::sin(57.0)).epsilon(1e-14));
  CHECK(piecewise_function(0.8) ==
        doctest::Approx(3.0 + 2.4 + 0.1 * 0.64 * std::sin(48.0)).epsilon(1e-14));
}

TEST_CASE("piecewise simulation") {
  const auto a = simulate_piecewise(2000, std::sqrt(0.05), 7);
  const auto b = simulate_piecewise(2000, std::sqrt(0.05), 7);
  CHECK(a.y == b.y);
  CHECK(a.change_index == 1800);
  CHECK(a.x.front() == 0.0);
  CHECK(a.x.back() == 1.0);
  const auto clean = simulate_piecewise(100, 0.0, 1);
  for (std::size_t i = 0; i < clean.x.size(); ++i) CHECK(clean.y[i] == piecewise_function(clean.x[i]));
  CHECK_THROWS_AS(simulate_piecewise(5), DataError);
}

TEST_CASE("hierarchical simulation is coherent and deterministic") {
  const auto h = three_level_tree();
  const auto p = simulate_hierarchical(h, 120, 7);
  const auto q = simulate_hierarchical(h, 120, 7);
  CHECK(p.values == q.values);
  CHECK(coherent_loss(h, p.matrix()) <= 1e-9);
}
