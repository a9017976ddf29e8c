#include "brac/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "brac/errors.hpp"

namespace brac {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f << text;
    f.flush();
    if (!f) throw FormatError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move " + tmp.string() + " into place: " + ec.message());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct Moments {
  double mean = 0.0, std = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

using Pair = std::pair<double, double>;  // (lr, strength)

struct CellStats {
  std::vector<double> scores;
  std::size_t failed = 0;
};

// Best pair among aggregated cells; nullopt for an empty map.
std::optional<Pair> pick(const std::map<Pair, CellStats>& cells) {
  std::optional<Pair> best;
  double best_mean = 0.0;
  bool best_clean = false;
  // Strength-major iteration so that the first maximum found is the tie winner.
  std::vector<Pair> order;
  for (const auto& [k, v] : cells) order.push_back(k);
  std::sort(order.begin(), order.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.second, a.first) < std::tie(b.second, b.first);
  });
  for (const Pair& k : order) {
    const CellStats& s = cells.at(k);
    const double m = moments(s.scores).mean;
    const bool clean = s.failed == 0;
    if (!best || (clean && !best_clean) || (clean == best_clean && m > best_mean)) {
      best = k;
      best_mean = m;
      best_clean = clean;
    }
  }
  return best;
}

std::string variant_of(const GridRecord& r) { return r.run.config.algo; }

}  // namespace

void GridSpec::validate() const {
  if (policy_lrs.empty()) throw ConfigError("grid: learning-rate list is empty");
  if (seeds == 0) throw ConfigError("grid: need at least one seed");
  for (double v : policy_lrs) {
    if (!(v > 0.0)) throw ConfigError("grid: learning rates must be positive");
  }
  for (double v : strengths) {
    if (!(v > 0.0)) throw ConfigError("grid: strengths must be positive");
  }
}

std::vector<double> strength_values(const TrainerConfig& cfg) {
  const std::string knob = strength_name(cfg);
  if (knob == "phi") return {0.005, 0.015, 0.05, 0.15, 0.5};
  if (knob == "epsilon") return {0.015, 0.05, 0.15, 0.5, 1.5};
  if (knob.empty()) return {};
  switch (cfg.divergence.kind) {
    case DivergenceKind::kMmd: return {3, 10, 30, 100, 300};
    case DivergenceKind::kWasserstein: return {0.3, 1.0, 3.0, 10.0, 30.0};
    default: return {0.1, 0.3, 1.0, 3.0, 10.0};
  }
}

GridSpec default_grid(const TrainerConfig& cfg) {
  GridSpec g;
  g.strengths = strength_values(cfg);
  return g;
}

std::string GridCell::file_name() const {
  std::ostringstream os;
  os << "cell_" << lr << '_' << strength << '_' << dataset << '_' << seed << ".json";
  return os.str();
}

std::uint64_t cell_seed(std::uint64_t base_seed, const GridCell& c) {
  return derive_seed(base_seed, {c.lr, c.strength, c.dataset, c.seed});
}

nlohmann::json GridRecord::to_json() const {
  return {{"cell", {cell.lr, cell.strength, cell.dataset, cell.seed}},
          {"policy_lr", policy_lr},
          {"strength", strength},
          {"dataset", dataset},
          {"run", run.to_json()}};
}

GridRecord GridRecord::from_json(const nlohmann::json& j) {
  try {
    GridRecord r;
    const auto& c = j.at("cell");
    r.cell = {c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>(), c.at(2).get<std::size_t>(),
              c.at(3).get<std::size_t>()};
    r.policy_lr = j.at("policy_lr").get<double>();
    r.strength = j.at("strength").get<double>();
    r.dataset = j.at("dataset").get<std::string>();
    r.run = RunRecord::from_json(j.at("run"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("grid record: ") + e.what());
  }
}

TrainerConfig cell_config(const GridSpec& grid, const TrainerConfig& base, const GridCell& cell) {
  TrainerConfig c = base;
  c.policy_lr = grid.policy_lrs.at(cell.lr);
  if (!grid.strengths.empty()) set_strength(c, grid.strengths.at(cell.strength));
  c.seed = cell_seed(base.seed, cell);
  c.validate();
  return c;
}

GridResult run_grid(const GridSpec& grid, const TrainerConfig& base, const std::vector<GridDataset>& datasets,
                    const Environment& env, const EvalProtocol& protocol, const fs::path& out_dir,
                    const GridOptions& options) {
  grid.validate();
  protocol.validate();
  if (datasets.empty()) throw ConfigError("grid: no datasets");
  if (grid.strengths.empty() != strength_name(base).empty()) {
    throw ConfigError("grid: strength list does not fit algorithm " + base.algo);
  }
  for (const GridDataset& d : datasets) {
    if (d.data == nullptr) throw ConfigError("grid: dataset '" + d.name + "' is not loaded");
  }
  fs::create_directories(out_dir);

  std::vector<GridCell> cells;
  for (std::size_t l = 0; l < grid.policy_lrs.size(); ++l)
    for (std::size_t s = 0; s < grid.strength_count(); ++s)
      for (std::size_t d = 0; d < datasets.size(); ++d)
        for (std::size_t k = 0; k < grid.seeds; ++k) cells.push_back({l, s, d, k});

  GridResult result;
  std::vector<std::optional<GridRecord>> slots(cells.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const fs::path p = out_dir / cells[i].file_name();
    if (fs::exists(p)) {
      slots[i] = GridRecord::from_json(read_json(p));
      ++result.resumed;
    } else {
      todo.push_back(i);
    }
  }
  if (options.max_new_runs != 0 && todo.size() > options.max_new_runs) todo.resize(options.max_new_runs);

  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= todo.size()) return;
      try {
        const GridCell& cell = cells[todo[t]];
        GridRecord rec;
        rec.cell = cell;
        rec.policy_lr = grid.policy_lrs[cell.lr];
        rec.strength = grid.strengths.empty() ? 0.0 : grid.strengths[cell.strength];
        rec.dataset = datasets[cell.dataset].name;
        const GridDataset& ds = datasets[cell.dataset];
        rec.run = train_offline(cell_config(grid, base, cell), *ds.data, ds.behavior, env, protocol);
        write_atomic(out_dir / cell.file_name(), rec.to_json().dump());
        std::lock_guard lock(callback_mutex);
        if (options.on_record) options.on_record(rec);
        slots[todo[t]] = std::move(rec);
      } catch (...) {
        std::lock_guard lock(callback_mutex);
        if (!error) error = std::current_exception();
        next = todo.size();
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t n = std::max<std::size_t>(1, std::min(options.parallelism, todo.size()));
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  result.executed = todo.size();
  for (auto& s : slots) {
    if (s) result.records.push_back(std::move(*s));
  }
  return result;
}

std::vector<GridRecord> load_grid_records(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("cell_") && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<GridRecord> out;
  for (const fs::path& p : files) out.push_back(GridRecord::from_json(read_json(p)));
  return out;
}

BestCell select_best(const std::vector<GridRecord>& records) {
  if (records.empty()) throw ConfigError("select_best: no records");
  std::set<double> lrs, strengths;
  std::set<std::string> datasets;
  std::set<std::size_t> seeds;
  std::set<std::tuple<double, double, std::string, std::size_t>> present;
  std::map<Pair, CellStats> cells;
  for (const GridRecord& r : records) {
    lrs.insert(r.policy_lr);
    strengths.insert(r.strength);
    datasets.insert(r.dataset);
    seeds.insert(r.cell.seed);
    present.insert({r.policy_lr, r.strength, r.dataset, r.cell.seed});
    CellStats& c = cells[{r.policy_lr, r.strength}];
    c.scores.push_back(r.run.final_score);
    c.failed += r.run.failed ? 1 : 0;
  }
  std::ostringstream missing;
  std::size_t n_missing = 0;
  for (double l : lrs)
    for (double s : strengths)
      for (const std::string& d : datasets)
        for (std::size_t k : seeds) {
          if (present.count({l, s, d, k})) continue;
          if (n_missing++ < 20) missing << " (lr=" << l << ", strength=" << s << ", dataset=" << d << ", seed=" << k << ")";
        }
  if (n_missing > 0) {
    throw ConfigError("select_best: incomplete grid, " + std::to_string(n_missing) + " missing cells:" + missing.str() +
                      (n_missing > 20 ? " ..." : ""));
  }
  const Pair p = *pick(cells);
  const CellStats& s = cells.at(p);
  return {p.first, p.second, moments(s.scores).mean, s.scores.size()};
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ContractError("spearman: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const Moments mx = moments(rx), my = moments(ry);
  if (mx.std == 0.0 || my.std == 0.0) return std::nullopt;
  double cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) cov += (rx[i] - mx.mean) * (ry[i] - my.mean);
  cov /= static_cast<double>(n);
  return cov / (mx.std * my.std);
}

std::vector<CorrelationGroup> correlation_report(const std::vector<GridRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string>, CorrelationGroup> groups;
  for (const GridRecord& r : records) {
    CorrelationGroup& g = groups[{r.run.env, variant_of(r), r.dataset}];
    g.env = r.run.env;
    g.variant = variant_of(r);
    g.dataset = r.dataset;
    g.points.emplace_back(r.run.mean_q_last_window, r.run.final_score);
  }
  std::vector<CorrelationGroup> out;
  for (auto& [k, g] : groups) {
    std::vector<double> q, s;
    for (const auto& [a, b] : g.points) {
      q.push_back(a);
      s.push_back(b);
    }
    g.spearman = spearman(q, s);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<GridRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::map<Pair, CellStats>> groups;
  for (const GridRecord& r : records) {
    CellStats& c = groups[{r.run.env, variant_of(r)}][{r.policy_lr, r.strength}];
    c.scores.push_back(r.run.final_score);
    c.failed += r.run.failed ? 1 : 0;
  }
  std::vector<AggregateRow> rows;
  for (const auto& [key, cells] : groups) {
    const std::optional<Pair> best = pick(cells);
    for (const auto& [p, s] : cells) {
      const Moments m = moments(s.scores);
      rows.push_back({key.first, key.second, p.first, p.second, m.mean, m.std, s.scores.size(), s.failed,
                      best && *best == p});
    }
  }
  return rows;
}

ReportFiles emit_report(const std::vector<GridRecord>& records, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw FormatError("cannot create " + out_dir.string() + ": " + ec.message());
  ReportFiles files{out_dir / "grid.csv", out_dir / "summary.json"};

  const std::vector<AggregateRow> rows = aggregate(records);
  std::ostringstream csv;
  csv << "env,variant,policy_lr,strength,mean_score,std_score,reported_mean,runs,failed,best\n";
  for (const AggregateRow& r : rows) {
    csv << r.env << ',' << r.variant << ',' << num(r.policy_lr) << ',' << num(r.strength) << ',' << num(r.mean) << ','
        << num(r.std) << ',' << num(clamp_score(r.mean)) << ',' << r.runs << ',' << r.failed << ',' << (r.best ? 1 : 0)
        << '\n';
  }
  write_atomic(files.grid_csv, csv.str());

  nlohmann::json summary;
  summary["records"] = records.size();
  nlohmann::json best = nlohmann::json::array();
  for (const AggregateRow& row : rows) {
    if (!row.best) continue;
    nlohmann::json b{{"env", row.env}, {"variant", row.variant}, {"policy_lr", row.policy_lr},
                     {"strength", row.strength}, {"mean_score", row.mean}, {"std_score", row.std},
                     {"reported_score", clamp_score(row.mean)}};
    // Per-dataset mean and std over seeds at the best cell, plus mean learning curves.
    std::map<std::string, std::vector<const GridRecord*>> by_ds;
    for (const GridRecord& r : records) {
      if (r.run.env == row.env && variant_of(r) == row.variant && r.policy_lr == row.policy_lr &&
          r.strength == row.strength) {
        by_ds[r.dataset].push_back(&r);
      }
    }
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [ds, rs] : by_ds) {
      std::vector<double> sc;
      std::vector<double> steps, curve;
      for (const GridRecord* r : rs) sc.push_back(r->run.final_score);
      const Moments m = moments(sc);
      const std::size_t len = rs.front()->run.eval_trace.size();
      bool aligned = true;
      for (const GridRecord* r : rs) aligned = aligned && r->run.eval_trace.size() == len;
      if (aligned) {
        for (std::size_t i = 0; i < len; ++i) {
          double s = 0.0;
          for (const GridRecord* r : rs) s += r->run.eval_trace[i].mean_return;
          steps.push_back(static_cast<double>(rs.front()->run.eval_trace[i].step));
          curve.push_back(s / static_cast<double>(rs.size()));
        }
      }
      per[ds] = {{"mean_score", m.mean},
                 {"std_score", m.std},
                 {"reported_score", clamp_score(m.mean)},
                 {"seeds", sc.size()},
                 {"curve_steps", steps},
                 {"curve_mean_return", curve}};
    }
    b["datasets"] = per;
    best.push_back(b);
  }
  summary["best"] = best;
  nlohmann::json corr = nlohmann::json::array();
  for (const CorrelationGroup& g : correlation_report(records)) {
    nlohmann::json q = nlohmann::json::array(), s = nlohmann::json::array();
    for (const auto& [a, b] : g.points) {
      q.push_back(a);
      s.push_back(b);
    }
    corr.push_back({{"env", g.env}, {"variant", g.variant}, {"dataset", g.dataset}, {"mean_q", q}, {"score", s},
                    {"spearman", g.spearman ? nlohmann::json(*g.spearman) : nlohmann::json("undefined")}});
  }
  summary["correlation"] = corr;
  write_atomic(files.summary_json, summary.dump(2));
  return files;
}

}  // namespace brac
