#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "hmix/changepoint.hpp"
#include "hmix/dataio.hpp"
#include "hmix/error.hpp"
#include "hmix/metrics.hpp"
#include "hmix/parallel.hpp"
#include "hmix/reconcile.hpp"

namespace fs = std::filesystem;

namespace hmix::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(trim(f));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const fs::path& file, std::size_t line) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError(file.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t to_size(const std::string& s, const fs::path& file, std::size_t line) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(file.string() + ":" + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return v;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << std::setprecision(17);
  return f;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto f = open_output(path);
  f << j.dump(1) << '\n';
}

struct Paths {
  fs::path out;
  fs::path hierarchy;
  fs::path panel;
  fs::path model;
};

Paths resolve_paths(const RunConfig& cfg, const std::string& model_override) {
  Paths p;
  p.out = cfg.output_dir;
  p.hierarchy = cfg.hierarchy_path.empty() ? p.out / "hierarchy.json" : fs::path(cfg.hierarchy_path);
  p.panel = cfg.panel_path.empty() ? p.out / "panel.csv" : fs::path(cfg.panel_path);
  p.model = model_override.empty() ? p.out / "model" : fs::path(model_override);
  return p;
}

bool same_file(const fs::path& a, const fs::path& b) {
  std::error_code ec;
  return fs::exists(a, ec) && fs::exists(b, ec) && fs::equivalent(a, b, ec);
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const RunConfig& cfg, const Paths& paths, std::ostream& out) {
  Hierarchy h;
  SeriesPanel panel;
  nlohmann::json meta{{"kind", cfg.simulate.kind}, {"seed", cfg.seed}, {"length", cfg.simulate.length}};
  if (cfg.simulate.kind == "piecewise") {
    const auto ps = simulate_piecewise(cfg.simulate.length, cfg.simulate.noise_sd, cfg.seed);
    const std::vector<std::string> only{"stream"};
    h = build_hierarchy({}, only);
    panel.ids = only;
    panel.values = {ps.y};
    for (std::size_t t = 0; t < ps.y.size(); ++t) panel.timestamps.push_back(static_cast<std::int64_t>(t));
    meta["change_index"] = ps.change_index;
    meta["noise_sd"] = cfg.simulate.noise_sd;
  } else {
    h = cfg.hierarchy_path.empty() ? three_level_tree() : load_hierarchy_spec(cfg.hierarchy_path);
    panel = simulate_hierarchical(h, cfg.simulate.length, cfg.seed, cfg.simulate.season);
    meta["season"] = cfg.simulate.season;
  }
  const fs::path hier_out = paths.out / "hierarchy.json";
  const fs::path panel_out = paths.out / "panel.csv";
  if (!(fs::path(cfg.hierarchy_path) == hier_out || same_file(cfg.hierarchy_path, hier_out))) {
    auto f = open_output(hier_out);
    f << dump_hierarchy_spec(h) << '\n';
  }
  {
    auto f = open_output(panel_out);
    write_panel_csv(f, panel);
  }
  write_json(paths.out / "simulate.json", meta);
  out << "simulated " << cfg.simulate.kind << " panel: " << h.size() << " series x " << panel.length()
      << " points -> " << panel_out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct Trained {
  HierarchyModel model;
  std::map<std::string, QuantileGenerator> quantiles;
};

HierarchyTrainConfig hierarchy_train_config(const RunConfig& cfg) {
  HierarchyTrainConfig t;
  t.roster = cfg.effective_roster();
  t.gating = cfg.gating;
  t.refit_experts = cfg.refit_experts;
  t.jobs = cfg.jobs;
  t.seed = cfg.seed;
  return t;
}

std::map<std::string, QuantileGenerator> train_quantiles(const RunConfig& cfg, const Hierarchy& h,
                                                         const SeriesPanel& panel, const HierarchyModel& model) {
  std::vector<QuantileGenerator> gens(h.size());
  parallel_for(h.size(), cfg.jobs, [&](std::size_t i) {
    const auto& x = panel.values[i];
    auto q = cfg.quantile;
    q.seed = cfg.quantile.seed + cfg.seed * 1000003ULL + i;
    std::size_t first = model.first_target;
    std::span<const double> pf(model.fitted[i]);
    if (first < q.window) {
      const std::size_t skip = q.window - first;
      if (skip >= pf.size()) throw DataError("validation window too short for quantile training");
      pf = pf.subspan(skip);
      first = q.window;
    }
    gens[i] = train_quantile(std::span<const double>(x).first(panel.split.val_end), pf, first, q);
  });
  std::map<std::string, QuantileGenerator> out;
  for (std::size_t i = 0; i < h.size(); ++i) out.emplace(h.id(i), std::move(gens[i]));
  return out;
}

Trained train_all(const RunConfig& cfg, const Hierarchy& h, const SeriesPanel& panel, bool with_quantiles) {
  Trained t;
  t.model = train_hierarchy_bottom_up(panel, h, hierarchy_train_config(cfg));
  if (with_quantiles) t.quantiles = train_quantiles(cfg, h, panel, t.model);
  return t;
}

void write_checkpoint(const fs::path& dir, const RunConfig& cfg, const Hierarchy& h, const SeriesPanel& panel,
                      const Trained& t) {
  nlohmann::json manifest{{"format", 1},
                          {"config", to_json(cfg)},
                          {"config_hash", config_hash(cfg)},
                          {"seed", cfg.seed},
                          {"hierarchy", nlohmann::json::parse(dump_hierarchy_spec(h))},
                          {"vertices", h.vertices()},
                          {"first_target", t.model.first_target},
                          {"split", {{"train_end", panel.split.train_end}, {"val_end", panel.split.val_end}}},
                          {"length", panel.length()},
                          {"training_order", t.model.training_order},
                          {"fitted", t.model.fitted},
                          {"quantiles", !t.quantiles.empty()}};
  write_json(dir / "manifest.json", manifest);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& f = t.model.forecasters.at(h.id(i));
    write_json(dir / ("mixture_" + std::to_string(i) + ".json"), to_json(f));
    if (!t.quantiles.empty()) write_json(dir / ("quantile_" + std::to_string(i) + ".json"), to_json(t.quantiles.at(h.id(i))));
    auto w = open_output(dir / ("weights_" + std::to_string(i) + ".csv"));
    w << "epoch,loss";
    for (std::size_t l = 0; l < f.experts.size(); ++l) w << ",expert_" << l;
    w << '\n';
    const auto& traj = f.history.weight_trajectory;
    for (std::size_t e = 0; e < traj.size(); ++e) {
      w << e + 1 << ',' << (e < f.history.epoch_loss.size() ? f.history.epoch_loss[e] : std::nan(""));
      for (double v : traj[e]) w << ',' << v;
      w << '\n';
    }
  }
}

int cmd_train(const RunConfig& cfg, const Paths& paths, std::ostream& out) {
  const auto h = load_hierarchy_spec(paths.hierarchy);
  const auto panel = load_panel_csv(paths.panel, h);
  const auto trained = train_all(cfg, h, panel, cfg.train_quantiles);

  // write next to the target and swap in only once everything is on disk
  const fs::path tmp = paths.model.parent_path() / (paths.model.filename().string() + ".partial");
  fs::remove_all(tmp);
  try {
    fs::create_directories(tmp);
    write_checkpoint(tmp, cfg, h, panel, trained);
    fs::remove_all(paths.model);
    fs::rename(tmp, paths.model);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
  out << "trained " << h.size() << " vertices (" << cfg.effective_roster().size() << " experts each";
  out << (trained.quantiles.empty() ? "" : ", with quantile generators") << ") -> " << paths.model.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- forecast

struct VertexForecast {
  std::vector<double> point;
  std::vector<std::vector<double>> quantiles;  // per step, over taus
};

VertexForecast forecast_vertex(const MixtureForecaster& f, const QuantileGenerator* gen, std::span<const double> hist,
                               std::size_t h, const std::vector<double>& taus) {
  VertexForecast vf;
  vf.point = forecast_mixture(f, hist, h);
  if (gen) {
    std::vector<double> ext(hist.begin(), hist.end());
    ext.insert(ext.end(), vf.point.begin(), vf.point.end());
    const std::size_t w = gen->window();
    if (hist.size() < w) throw DataError("history shorter than the quantile window");
    for (std::size_t s = 0; s < h; ++s) {
      const std::span<const double> window(ext.data() + hist.size() + s - w, w);
      vf.quantiles.push_back(gen->quantiles(window, vf.point[s], taus));
    }
  }
  return vf;
}

std::size_t resolve_horizon(std::size_t requested, const RunConfig& cfg, std::size_t origin, std::size_t length) {
  std::size_t h = requested ? requested : cfg.horizon;
  if (h == 0) h = length > origin ? length - origin : 0;
  if (h == 0) throw ConfigError("horizon is zero; pass --horizon");
  return h;
}

int cmd_forecast(const RunConfig& cfg, const Paths& paths, std::optional<std::size_t> origin_opt,
                 std::size_t horizon, std::vector<double> taus, std::ostream& out) {
  const auto ck = load_checkpoint(paths.model);
  const auto panel = load_panel_csv(paths.panel, ck.hierarchy);
  const std::size_t origin = origin_opt.value_or(panel.split.val_end);
  if (origin > panel.length()) throw DataError("origin lies beyond the end of the panel");
  const std::size_t h = resolve_horizon(horizon, cfg, origin, panel.length());
  if (taus.empty()) taus = cfg.quantile.taus;
  std::sort(taus.begin(), taus.end());
  for (double t : taus)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("quantile levels must lie in (0, 1)");

  const auto& hier = ck.hierarchy;
  std::vector<VertexForecast> res(hier.size());
  parallel_for(hier.size(), cfg.jobs, [&](std::size_t i) {
    const auto& id = hier.id(i);
    const auto q = ck.quantiles.find(id);
    res[i] = forecast_vertex(ck.forecasters.at(id), q == ck.quantiles.end() ? nullptr : &q->second,
                             std::span<const double>(panel.values[i]).first(origin), h, taus);
  });
  auto pf = open_output(paths.out / "forecasts.csv");
  pf << "series_id,step,value\n";
  for (std::size_t i = 0; i < hier.size(); ++i)
    for (std::size_t s = 0; s < h; ++s) pf << hier.id(i) << ',' << s + 1 << ',' << res[i].point[s] << '\n';
  if (!ck.quantiles.empty()) {
    auto qf = open_output(paths.out / "quantiles.csv");
    qf << "vertex,step,tau,value\n";
    for (std::size_t i = 0; i < hier.size(); ++i)
      for (std::size_t s = 0; s < h; ++s)
        for (std::size_t k = 0; k < taus.size(); ++k)
          qf << hier.id(i) << ',' << s + 1 << ',' << taus[k] << ',' << res[i].quantiles[s][k] << '\n';
  }
  out << "forecast " << h << " step(s) from index " << origin << " for " << hier.size() << " series -> "
      << (paths.out / "forecasts.csv").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct PathForecasts {
  std::vector<std::vector<double>> point;  // per vertex row
  // per vertex row, per step: quantile levels and values (may be empty)
  std::vector<std::vector<std::pair<std::vector<double>, std::vector<double>>>> quantiles;
};

double coherent_loss_of(const Hierarchy& h, const std::vector<std::vector<double>>& rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t s = 0; s < rows[i].size(); ++s) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = rows[i][s];
  return coherent_loss(h, m);
}

EvalReport score(const Hierarchy& h, const SeriesPanel& panel, const PathForecasts& fc) {
  EvalReport r;
  const std::size_t origin = panel.split.val_end;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& x = panel.values[i];
    const auto& p = fc.point[i];
    const std::span<const double> truth(x.data() + origin, p.size());
    VertexMetrics v;
    v.vertex = h.id(i);
    v.level = h.level(i);
    v.mase = mase(std::span<const double>(x).first(origin), truth, p);
    v.nrmse = nrmse(truth, p);
    if (!fc.quantiles.empty() && !fc.quantiles[i].empty()) {
      double acc = 0.0;
      for (std::size_t s = 0; s < p.size(); ++s) {
        const auto& [taus, qs] = fc.quantiles[i][s];
        acc += crps_from_quantiles(truth[s], taus, qs);
      }
      v.crps = acc / static_cast<double>(p.size());
      v.has_crps = true;
    }
    r.vertices.push_back(v);
  }
  r.coherent_loss = coherent_loss_of(h, fc.point);
  return r;
}

PathForecasts model_forecasts(const Checkpoint& ck, const SeriesPanel& panel, std::size_t h, std::size_t jobs) {
  const auto& hier = ck.hierarchy;
  const auto grid = crps_grid(99);
  PathForecasts fc;
  fc.point.resize(hier.size());
  fc.quantiles.resize(hier.size());
  parallel_for(hier.size(), jobs, [&](std::size_t i) {
    const auto& id = hier.id(i);
    const auto q = ck.quantiles.find(id);
    const auto* gen = q == ck.quantiles.end() ? nullptr : &q->second;
    auto vf = forecast_vertex(ck.forecasters.at(id), gen,
                              std::span<const double>(panel.values[i]).first(panel.split.val_end), h, grid);
    fc.point[i] = std::move(vf.point);
    for (auto& qs : vf.quantiles) fc.quantiles[i].emplace_back(grid, std::move(qs));
  });
  return fc;
}

PathForecasts external_forecasts(const Hierarchy& h, const SeriesPanel& panel, const fs::path& points,
                                 const fs::path& quantiles) {
  const auto table = read_long_csv(points);
  const std::size_t avail = panel.length() - panel.split.val_end;
  PathForecasts fc;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto it = table.find(h.id(i));
    if (it == table.end()) throw DataError("no forecasts for series '" + h.id(i) + "'");
    if (i == 0) steps = it->second.size();
    if (it->second.size() != steps || it->second.begin()->first != 1 || it->second.rbegin()->first != steps) {
      throw DataError("forecasts for '" + h.id(i) + "' must cover steps 1.." + std::to_string(steps));
    }
    if (steps > avail) throw DataError("forecasts run past the end of the test split");
    std::vector<double> p;
    for (const auto& [s, v] : it->second) p.push_back(v);
    fc.point.push_back(std::move(p));
  }
  if (!quantiles.empty()) {
    std::ifstream in(quantiles);
    if (!in) throw DataError("cannot read " + quantiles.string());
    std::map<std::string, std::map<std::size_t, std::map<double, double>>> q;
    std::string line;
    std::getline(in, line);
    if (split_fields(line) != std::vector<std::string>{"vertex", "step", "tau", "value"}) {
      throw DataError(quantiles.string() + ": expected header vertex,step,tau,value");
    }
    for (std::size_t n = 2; std::getline(in, line); ++n) {
      if (trim(line).empty()) continue;
      const auto f = split_fields(line);
      if (f.size() != 4) throw DataError(quantiles.string() + ":" + std::to_string(n) + ": expected 4 fields");
      q[f[0]][to_size(f[1], quantiles, n)][to_double(f[2], quantiles, n)] = to_double(f[3], quantiles, n);
    }
    fc.quantiles.resize(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      for (std::size_t s = 1; s <= steps; ++s) {
        const auto vi = q.find(h.id(i));
        if (vi == q.end() || !vi->second.count(s)) throw DataError("missing quantiles for '" + h.id(i) + "'");
        std::vector<double> taus, vals;
        for (const auto& [t, v] : vi->second.at(s)) {
          taus.push_back(t);
          vals.push_back(v);
        }
        fc.quantiles[i].emplace_back(std::move(taus), std::move(vals));
      }
    }
  }
  return fc;
}

void write_report(const fs::path& dir, const EvalReport& r) {
  write_json(dir / "report.json", to_json(r));
  auto v = open_output(dir / "vertices.csv");
  v << "vertex,level,mase,crps,nrmse\n";
  for (const auto& m : r.vertices) {
    v << m.vertex << ',' << m.level << ',' << m.mase << ',';
    if (m.has_crps) v << m.crps;
    v << ',' << m.nrmse << '\n';
  }
  auto l = open_output(dir / "levels.csv");
  l << "level,count,mase_mean,mase_sd,crps_mean\n";
  for (const auto& m : r.levels()) {
    l << m.level << ',' << m.count << ',' << m.mase_mean << ',' << m.mase_sd << ',';
    if (m.has_crps) l << m.crps_mean;
    l << '\n';
  }
}

void write_comparison(const fs::path& path, const Checkpoint& ck, const SeriesPanel& panel, std::size_t h,
                      const EvalReport& mixture) {
  const auto& hier = ck.hierarchy;
  const std::size_t origin = panel.split.val_end;
  const std::size_t L = ck.forecasters.at(hier.id(0)).experts.size();
  std::vector<std::pair<std::string, PathForecasts>> rows;
  PathForecasts avg;
  for (std::size_t i = 0; i < hier.size(); ++i) {
    const std::span<const double> hist = std::span<const double>(panel.values[i]).first(origin);
    avg.point.push_back(forecast_mixture(equal_weight(ck.forecasters.at(hier.id(i))), hist, h));
  }
  rows.emplace_back("Average", std::move(avg));
  for (std::size_t l = 0; l < L; ++l) {
    PathForecasts single;
    std::string name;
    for (std::size_t i = 0; i < hier.size(); ++i) {
      const auto& f = ck.forecasters.at(hier.id(i));
      if (f.experts.size() != L) throw DataError("vertices disagree on the expert roster");
      if (i == 0) name = f.experts[l]->name();
      single.point.push_back(
          forecast_recursive(*f.experts[l], std::span<const double>(panel.values[i]).first(origin), h));
    }
    rows.emplace_back(name, std::move(single));
  }
  auto out = open_output(path);
  out << "model,level,count,mase_mean,mase_sd,coherent_loss\n";
  const auto emit = [&](const std::string& name, const EvalReport& r) {
    for (const auto& m : r.levels())
      out << name << ',' << m.level << ',' << m.count << ',' << m.mase_mean << ',' << m.mase_sd << ','
          << r.coherent_loss << '\n';
  };
  emit("mixture", mixture);
  for (const auto& [name, fc] : rows) emit(name, score(hier, panel, fc));
}

void write_lambda_sweep(const fs::path& path, RunConfig cfg, const Hierarchy& h, const SeriesPanel& panel,
                        std::size_t horizon, std::ostream& out) {
  auto f = open_output(path);
  f << "lambda,coherent_loss,mean_mase\n";
  for (double lambda : cfg.lambda_sweep) {
    cfg.gating.lambda = lambda;
    cfg.gating.level_lambda.clear();
    const auto t = train_all(cfg, h, panel, false);
    PathForecasts fc;
    for (std::size_t i = 0; i < h.size(); ++i) {
      fc.point.push_back(forecast_mixture(t.model.forecasters.at(h.id(i)),
                                          std::span<const double>(panel.values[i]).first(panel.split.val_end),
                                          horizon));
    }
    const auto r = score(h, panel, fc);
    f << lambda << ',' << r.coherent_loss << ',' << r.mean_mase() << '\n';
    out << "  lambda " << lambda << ": coherent loss " << r.coherent_loss << ", mean MASE " << r.mean_mase() << '\n';
  }
}

void write_seed_summary(const fs::path& path, const std::vector<std::string>& reports) {
  // level -> per-report level means
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_level;
  std::vector<double> coherent;
  for (const auto& r : reports) {
    const auto j = read_json(r);
    try {
      for (const auto& l : j.at("levels")) {
        auto& slot = by_level[l.at("level").get<std::size_t>()];
        slot.first.push_back(l.at("mase_mean").get<double>());
        if (l.contains("crps_mean") && !l.at("crps_mean").is_null()) slot.second.push_back(l.at("crps_mean").get<double>());
      }
      coherent.push_back(j.at("coherent_loss").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(r + ": not an evaluation report (" + e.what() + ")");
    }
  }
  auto f = open_output(path);
  f << "level,runs,mase_mean,mase_sd,crps_mean,crps_sd\n";
  for (const auto& [level, v] : by_level) {
    const auto [mm, ms] = mean_sd(v.first);
    f << level << ',' << v.first.size() << ',' << mm << ',' << ms << ',';
    if (!v.second.empty()) {
      const auto [cm, cs] = mean_sd(v.second);
      f << cm << ',' << cs;
    } else {
      f << ',';
    }
    f << '\n';
  }
  const auto [cm, cs] = mean_sd(coherent);
  f << "coherent," << coherent.size() << ',' << cm << ',' << cs << ",,\n";
}

struct EvaluateArgs {
  std::string forecasts;
  std::string quantiles;
  bool lambda_sweep = false;
  std::vector<std::string> reports;
};

int cmd_evaluate(const RunConfig& cfg, const Paths& paths, const EvaluateArgs& a, std::ostream& out) {
  const fs::path dir = paths.out / "eval";
  if (!a.reports.empty()) {
    write_seed_summary(dir / "seed_summary.csv", a.reports);
    out << "aggregated " << a.reports.size() << " reports -> " << (dir / "seed_summary.csv").string() << '\n';
    return 0;
  }
  EvalReport report;
  if (!a.forecasts.empty()) {
    const auto h = load_hierarchy_spec(paths.hierarchy);
    const auto panel = load_panel_csv(paths.panel, h);
    report = score(h, panel, external_forecasts(h, panel, a.forecasts, a.quantiles));
    report.seed = cfg.seed;
    report.config_hash = config_hash(cfg);
  } else {
    const auto ck = load_checkpoint(paths.model);
    const auto panel = load_panel_csv(paths.panel, ck.hierarchy);
    const std::size_t avail = panel.length() - panel.split.val_end;
    const std::size_t h = std::min(resolve_horizon(0, cfg, panel.split.val_end, panel.length()), avail);
    report = score(ck.hierarchy, panel, model_forecasts(ck, panel, h, cfg.jobs));
    report.seed = ck.config.seed;
    report.config_hash = config_hash(ck.config);
    write_comparison(dir / "comparison.csv", ck, panel, h, report);
    if (a.lambda_sweep) {
      out << "lambda sweep:\n";
      write_lambda_sweep(dir / "lambda_sweep.csv", ck.config, ck.hierarchy, panel, h, out);
    }
  }
  write_report(dir, report);
  out << "mean MASE " << report.mean_mase() << ", coherent loss " << report.coherent_loss << " -> " << dir.string()
      << '\n';
  return 0;
}

// ---------------------------------------------------------------- reconcile

Eigen::MatrixXd table_matrix(const Hierarchy& h, const LongTable& t, std::vector<std::size_t>* steps_out) {
  std::vector<std::size_t> steps;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto it = t.find(h.id(i));
    if (it == t.end()) throw DataError("no rows for series '" + h.id(i) + "'");
    std::vector<std::size_t> s;
    for (const auto& [k, v] : it->second) s.push_back(k);
    if (i == 0) steps = s;
    if (s != steps) throw DataError("series '" + h.id(i) + "' covers different steps");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(steps.size()));
  for (std::size_t i = 0; i < h.size(); ++i) {
    Eigen::Index c = 0;
    for (const auto& [k, v] : t.at(h.id(i))) m(static_cast<Eigen::Index>(i), c++) = v;
  }
  if (steps_out) *steps_out = steps;
  return m;
}

struct ReconcileArgs {
  std::string method;
  std::string forecasts;
  std::string residuals;
  std::string output;
};

int cmd_reconcile(const RunConfig& cfg, const Paths& paths, const ReconcileArgs& a, std::ostream& out) {
  const auto method = a.method.empty() ? cfg.reconciliation : reconcile_method_from_string(a.method);
  const fs::path fc_path = a.forecasts.empty() ? paths.out / "forecasts.csv" : fs::path(a.forecasts);
  const fs::path out_path = a.output.empty() ? paths.out / "reconciled.csv" : fs::path(a.output);
  if (same_file(fc_path, out_path)) throw ConfigError("reconcile would overwrite its input");

  const bool needs_errors = method == ReconcileMethod::mint_sam || method == ReconcileMethod::mint_shr ||
                            method == ReconcileMethod::mint_ols || method == ReconcileMethod::erm;
  std::optional<Checkpoint> ck;
  Hierarchy h;
  if (needs_errors && a.residuals.empty()) {
    ck = load_checkpoint(paths.model);
    h = ck->hierarchy;
  } else {
    h = load_hierarchy_spec(paths.hierarchy);
  }
  std::vector<std::size_t> steps;
  const Eigen::MatrixXd base = table_matrix(h, read_long_csv(fc_path), &steps);
  const Eigen::MatrixXd S = summing_matrix(h).entries;

  // validation one-step fits against the truth
  Eigen::MatrixXd fitted, truth;
  if (ck) {
    const auto panel = load_panel_csv(paths.panel, h);
    const std::size_t from = std::max(ck->first_target, ck->split.train_end);
    const std::size_t to = ck->split.val_end;
    fitted.resize(S.rows(), static_cast<Eigen::Index>(to - from));
    truth.resizeLike(fitted);
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t t = from; t < to; ++t) {
        const auto c = static_cast<Eigen::Index>(t - from), r = static_cast<Eigen::Index>(i);
        fitted(r, c) = ck->fitted[i][t - ck->first_target];
        truth(r, c) = panel.values[i][t];
      }
  }

  ReconciliationPlan plan;
  const MintOptions base_opts{MintKind::shr, cfg.shrinkage_alpha, cfg.estimate_shrinkage};
  const auto errors = [&]() -> Eigen::MatrixXd {
    if (!a.residuals.empty()) return table_matrix(h, read_long_csv(a.residuals), nullptr);
    return fitted - truth;
  };
  switch (method) {
    case ReconcileMethod::bu: plan = bu_plan(S); break;
    case ReconcileMethod::ols: plan = ols_plan(S); break;
    case ReconcileMethod::mint_sam: plan = mint_plan(S, errors(), {MintKind::sam, base_opts.alpha, false}); break;
    case ReconcileMethod::mint_shr: plan = mint_plan(S, errors(), base_opts); break;
    case ReconcileMethod::mint_ols: plan = mint_plan(S, errors(), {MintKind::ols, base_opts.alpha, false}); break;
    case ReconcileMethod::erm:
      if (!ck) throw ConfigError("erm needs a trained checkpoint rather than --residuals");
      plan = erm_plan(S, fitted, truth);
      break;
  }
  const Eigen::MatrixXd rec = reconcile(plan, base);
  auto f = open_output(out_path);
  f << "series_id,step,value\n";
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t s = 0; s < steps.size(); ++s) f << h.id(i) << ',' << steps[s] << ',' << rec(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) << '\n';
  out << "reconciled with " << to_string(method) << ": coherent loss " << coherent_loss(h, base) << " -> "
      << coherent_loss(h, rec);
  if (plan.ridge_applied) out << " (ridge changed the erm solution)";
  out << " -> " << out_path.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- online

std::vector<double> read_stream(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<double> xs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    double v = 0.0;
    const auto& last = f.back();
    auto [p, ec] = std::from_chars(last.data(), last.data() + last.size(), v);
    if (ec != std::errc() || p != last.data() + last.size()) {
      if (n == 1) continue;  // header
      throw DataError(path.string() + ":" + std::to_string(n) + ": bad number '" + last + "'");
    }
    if (!std::isfinite(v)) throw DataError(path.string() + ":" + std::to_string(n) + ": non-finite value");
    xs.push_back(v);
  }
  return xs;
}

struct OnlineArgs {
  std::string vertex;
  std::string stream;
  std::string output;
  std::optional<std::size_t> start;
  bool no_mitigation = false;
};

int cmd_online(const RunConfig& cfg, const Paths& paths, const OnlineArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint(paths.model);
  const std::string vertex = a.vertex.empty() ? ck.hierarchy.id(ck.hierarchy.root()) : a.vertex;
  if (!ck.forecasters.count(vertex)) throw DataError("checkpoint has no vertex '" + vertex + "'");
  auto forecaster = ck.forecasters.at(vertex);
  const auto qit = ck.quantiles.find(vertex);
  const QuantileGenerator* gen = qit == ck.quantiles.end() || cfg.online.taus.empty() ? nullptr : &qit->second;

  std::vector<double> stream;
  std::size_t start = 0;
  if (!a.stream.empty()) {
    stream = read_stream(a.stream);
    start = std::max(forecaster.min_history(), forecaster.gate.window());
    if (gen) start = std::max(start, gen->window());
  } else {
    const auto panel = load_panel_csv(paths.panel, ck.hierarchy);
    stream = panel.series(vertex);
    start = panel.split.val_end;
  }
  if (a.start) start = *a.start;
  auto oc = cfg.online;
  if (a.no_mitigation) oc.mitigation = false;

  const fs::path out_path = a.output.empty() ? paths.out / (a.no_mitigation ? "online_nomit.csv" : "online.csv")
                                             : fs::path(a.output);
  auto f = open_output(out_path);
  f << "t,y,yhat,residual,map_runlength,detected";
  for (std::size_t l = 0; l < forecaster.experts.size(); ++l) f << ",w_" << l;
  if (gen)
    for (double t : oc.taus) f << ",q_" << t;
  f << '\n';
  if (start >= stream.size()) {
    out << "online: empty stream, nothing to do\n";
    return 0;
  }
  const auto recs = online_loop(forecaster, gen, stream, start, oc);
  double sse = 0.0;
  std::size_t detections = 0;
  for (const auto& r : recs) {
    f << r.t << ',' << r.y << ',' << r.yhat << ',' << r.residual << ',' << r.map_run_length << ','
      << (r.detected ? 1 : 0);
    for (double w : r.weights) f << ',' << w;
    for (double q : r.quantiles) f << ',' << q;
    f << '\n';
    sse += r.residual * r.residual;
    detections += r.detected;
  }
  out << "online " << vertex << (oc.mitigation ? "" : " (no mitigation)") << ": " << recs.size() << " steps, "
      << detections << " detection(s), cumulative squared error " << sse << " -> " << out_path.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- convert

int cmd_convert(const std::string& wide, const std::string& output, std::ostream& out) {
  std::ifstream in(wide);
  if (!in) throw DataError("cannot read " + wide);
  std::string line;
  if (!std::getline(in, line)) throw DataError(wide + ": empty file");
  const auto header = split_fields(line);
  if (header.size() < 2) throw DataError(wide + ": expected timestamp plus at least one series column");
  std::vector<std::vector<std::pair<std::string, std::string>>> cols(header.size() - 1);
  std::size_t rows = 0;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != header.size()) throw DataError(wide + ":" + std::to_string(n) + ": wrong field count");
    to_double(f[0], wide, n);
    for (std::size_t c = 1; c < f.size(); ++c) {
      to_double(f[c], wide, n);
      cols[c - 1].emplace_back(f[0], f[c]);
    }
    ++rows;
  }
  if (same_file(wide, output)) throw ConfigError("convert would overwrite its input");
  auto o = open_output(output);
  o << "series_id,timestamp,value\n";
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (const auto& [t, v] : cols[c]) o << header[c + 1] << ',' << t << ',' << v << '\n';
  out << "converted " << cols.size() << " series x " << rows << " rows -> " << output << '\n';
  return 0;
}

}  // namespace

LongTable read_long_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (split_fields(line).size() != 3) throw DataError(path.string() + ": expected a 3-column header");
  LongTable t;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 3) throw DataError(path.string() + ":" + std::to_string(n) + ": expected 3 fields");
    const auto step = to_size(f[1], path, n);
    if (!t[f[0]].emplace(step, to_double(f[2], path, n)).second) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": duplicate row for '" + f[0] + "'");
    }
  }
  return t;
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("no checkpoint at " + dir.string() + " (run `hmix train` first)");
  const auto m = read_json(dir / "manifest.json");
  Checkpoint ck;
  try {
    ck.config = run_config_from_json(m.at("config"));
    ck.hierarchy = parse_hierarchy_spec(m.at("hierarchy").dump());
    ck.first_target = m.at("first_target").get<std::size_t>();
    ck.split.train_end = m.at("split").at("train_end").get<std::size_t>();
    ck.split.val_end = m.at("split").at("val_end").get<std::size_t>();
    ck.fitted = m.at("fitted").get<std::vector<std::vector<double>>>();
    const bool with_q = m.at("quantiles").get<bool>();
    for (std::size_t i = 0; i < ck.hierarchy.size(); ++i) {
      const auto& id = ck.hierarchy.id(i);
      ck.forecasters.emplace(id, mixture_forecaster_from_json(read_json(dir / ("mixture_" + std::to_string(i) + ".json"))));
      if (with_q) {
        ck.quantiles.emplace(id, quantile_generator_from_json(read_json(dir / ("quantile_" + std::to_string(i) + ".json"))));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint " + dir.string() + ": " + e.what());
  }
  if (ck.fitted.size() != ck.hierarchy.size()) throw DataError("corrupt checkpoint: fitted rows do not match vertices");
  return ck;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hmix: hierarchical mixture-of-experts forecasting"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string config_path, out_dir, hierarchy, panel, model;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads for per-vertex work (0 = all cores)");
  app.add_option("--config", config_path, "Run config (JSON)");
  app.add_option("--out", out_dir, "Output directory (overrides the config)");
  app.add_option("--hierarchy", hierarchy, "Hierarchy document (default <out>/hierarchy.json)");
  app.add_option("--panel", panel, "Long-format panel CSV (default <out>/panel.csv)");
  app.add_option("--model", model, "Checkpoint directory (default <out>/model)");

  auto* sim = app.add_subcommand("simulate", "Write a synthetic panel and hierarchy");
  std::string kind;
  std::size_t length = 0;
  sim->add_option("--kind", kind, "hierarchical or piecewise");
  sim->add_option("--length", length, "Series length");

  auto* train = app.add_subcommand("train", "Train experts, gates and quantile generators");

  auto* fc = app.add_subcommand("forecast", "Point and quantile forecasts from a checkpoint");
  std::size_t horizon = 0, origin = 0;
  std::vector<double> taus;
  fc->add_option("--horizon,-H", horizon, "Steps ahead (default: the test split)");
  auto* origin_opt = fc->add_option("--origin", origin, "Forecast from this index (default: end of validation)");
  fc->add_option("--taus", taus, "Quantile levels")->delimiter(',');

  auto* ev = app.add_subcommand("evaluate", "Score forecasts on the test split");
  EvaluateArgs ea;
  ev->add_option("--forecasts", ea.forecasts, "Score this series_id,step,value CSV instead of the model");
  ev->add_option("--quantiles", ea.quantiles, "Quantile CSV (vertex,step,tau,value) for --forecasts");
  ev->add_flag("--lambda-sweep", ea.lambda_sweep, "Retrain for every lambda in the sweep");
  ev->add_option("--aggregate", ea.reports, "Summarise report.json files from several seeds")->delimiter(',');

  auto* rc = app.add_subcommand("reconcile", "Make base forecasts coherent");
  ReconcileArgs ra;
  rc->add_option("--method", ra.method, "bu, ols, mint_sam, mint_shr, mint_ols or erm");
  rc->add_option("--forecasts", ra.forecasts, "Base forecasts (default <out>/forecasts.csv)");
  rc->add_option("--residuals", ra.residuals, "One-step errors as series_id,step,value");
  rc->add_option("--output", ra.output, "Reconciled CSV (default <out>/reconciled.csv)");

  auto* on = app.add_subcommand("online", "Online updates with change-point mitigation");
  OnlineArgs oa;
  std::size_t start = 0;
  on->add_option("--vertex", oa.vertex, "Vertex to stream (default: the root)");
  on->add_option("--stream", oa.stream, "Stream CSV; the last column holds the values");
  auto* start_opt = on->add_option("--start", start, "First index to predict");
  on->add_option("--output", oa.output, "Record CSV");
  on->add_flag("--no-mitigation", oa.no_mitigation, "Disable the shrinkage reset");

  auto* cv = app.add_subcommand("convert", "Wide CSV (timestamp,id1,id2,...) to long format");
  std::string wide, conv_out;
  cv->add_option("--wide", wide, "Wide input CSV")->required();
  cv->add_option("--output", conv_out, "Long output CSV")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (cv->parsed()) return cmd_convert(wide, conv_out, out);
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (jobs_opt->count()) cfg.jobs = jobs;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!hierarchy.empty()) cfg.hierarchy_path = hierarchy;
    if (!panel.empty()) cfg.panel_path = panel;
    if (!kind.empty()) cfg.simulate.kind = kind;
    if (length) cfg.simulate.length = length;
    if (cfg.simulate.kind != "hierarchical" && cfg.simulate.kind != "piecewise") {
      throw ConfigError("--kind must be hierarchical or piecewise");
    }
    const auto paths = resolve_paths(cfg, model);
    if (sim->parsed()) return cmd_simulate(cfg, paths, out);
    if (train->parsed()) return cmd_train(cfg, paths, out);
    if (fc->parsed()) {
      std::optional<std::size_t> o;
      if (origin_opt->count()) o = origin;
      return cmd_forecast(cfg, paths, o, horizon, taus, out);
    }
    if (ev->parsed()) return cmd_evaluate(cfg, paths, ea, out);
    if (rc->parsed()) return cmd_reconcile(cfg, paths, ra, out);
    if (on->parsed()) {
      if (start_opt->count()) oa.start = start;
      return cmd_online(cfg, paths, oa, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::config: return 2;
      case ErrorKind::data: return 3;
      case ErrorKind::numeric: return 4;
    }
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace hmix::cli
