// Runs exploration episodes from a scenario file, optionally as a sweep.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "scanplan/config.hpp"
#include "scanplan/sim.hpp"

namespace fs = std::filesystem;
using namespace scanplan;

namespace {

struct SweepCell {
  std::string label;
  std::string key;
  ConfigTree value;
};

struct Job {
  std::size_t cell = 0;
  SimConfig config;
  std::string stem;
};

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string::npos ? std::string::npos : p - start));
    if (p == std::string::npos) break;
    start = p + 1;
  }
  return out;
}

std::vector<SweepCell> sweep_cells(const std::string& axis, const ConfigTree& base) {
  if (axis.empty()) return {SweepCell{"single", "", {}}};
  std::string key = axis;
  std::vector<std::string> values;
  const std::size_t eq = axis.find('=');
  if (eq != std::string::npos) {
    key = axis.substr(0, eq);
    values = split(axis.substr(eq + 1), ',');
  } else if (axis == "controller") {
    values = {"fu_mpc", "fixed:30", "fixed:100", "fixed:360"};
  } else {
    throw InvalidQuery("sweep: axis '" + axis + "' needs values, e.g. " + axis + "=a,b");
  }
  config_value(base, key);  // rejects unknown keys
  std::vector<SweepCell> cells;
  for (const auto& v : values) {
    ConfigTree parsed = ConfigTree::parse(v, nullptr, false);
    if (parsed.is_discarded()) parsed = v;
    cells.push_back({sanitize(key + "=" + v), key, parsed});
  }
  return cells;
}

struct Stats {
  double mean = 0.0, min = 0.0, max = 0.0;
};

Stats stats(const std::vector<double>& v) {
  if (v.empty()) return {};
  Stats s{0.0, v.front(), v.front()};
  for (double x : v) {
    s.mean += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean /= static_cast<double>(v.size());
  return s;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frontier- and uncertainty-aware scan planning: episode runner"};
  std::string scenario, out_dir, sweep, save_scene;
  std::vector<std::string> sets;
  int repeats = 1;
  std::optional<std::uint64_t> seed;
  bool dump = false;
  app.add_option("--scenario", scenario, "Scenario file (JSON key tree)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--set", sets, "Override KEY=VALUE (repeatable)");
  app.add_option("--sweep", sweep, "Sweep axis: 'controller' or KEY=v1,v2,...");
  app.add_option("--repeats", repeats, "Episodes per sweep cell (seed offsets 0..N-1)")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--save-scene", save_scene, "Write the ground-truth scene grid and exit");
  app.add_flag("--dump-config", dump, "Print the effective configuration and exit");
  CLI11_PARSE(app, argc, argv);

  ConfigTree base;
  std::vector<SweepCell> cells;
  try {
    base = scenario.empty() ? default_config_tree() : load_scenario(scenario);
    for (const auto& s : sets) apply_override(base, s);
    if (seed) base["seed"] = *seed;
    cells = sweep_cells(sweep, base);
    config_from_tree(base);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  if (dump) {
    std::cout << base.dump(2) << '\n';
    return 0;
  }
  if (!save_scene.empty()) {
    try {
      const SimConfig c = config_from_tree(base);
      SceneSpec spec = c.scene;
      save_grid(save_scene, generate_scene(spec).truth);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
    return 0;
  }
  if (out_dir.empty()) {
    std::cerr << "error: --out is required\n";
    return 2;
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    std::cerr << "error: cannot create output directory '" << out_dir << "'\n";
    return 2;
  }

  std::vector<Job> jobs;
  const std::uint64_t base_seed = base.at("seed").get<std::uint64_t>();
  try {
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      for (int r = 0; r < repeats; ++r) {
        ConfigTree tree = base;
        if (!cells[ci].key.empty()) apply_override(tree, cells[ci].key + "=" + cells[ci].value.dump());
        tree["seed"] = base_seed + static_cast<std::uint64_t>(r);
        Job job{ci, config_from_tree(tree), ""};
        job.stem = cells[ci].label + "_seed" + std::to_string(job.config.seed);
        jobs.push_back(std::move(job));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SCANPLAN_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) threads = static_cast<unsigned>(n);
  }
  threads = std::min<unsigned>(threads, static_cast<unsigned>(jobs.size()));

  std::vector<EpisodeMetrics> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      try {
        results[i] = run_episode(job.config);
        const fs::path dir(out_dir);
        std::ofstream csv(dir / (job.stem + ".csv"));
        write_metrics_csv(csv, results[i]);
        std::ofstream js(dir / (job.stem + ".json"));
        write_summary_json(js, results[i]);
        std::ofstream timing(dir / (job.stem + ".timing.csv"));
        write_timing_csv(timing, results[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      std::lock_guard lock(log_mutex);
      const auto& m = results[i];
      std::cerr << job.stem << ": "
                << (errors[i].empty() ? m.end_reason + " t=" + num(m.end_time) +
                                            " coverage=" + num(m.coverage_final)
                                      : "error: " + errors[i])
                << '\n';
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ofstream summary(fs::path(out_dir) / "summary.csv");
  summary << "cell,episodes,completed,time_mean,time_min,time_max,trajectory_mean,trajectory_min,"
             "trajectory_max,coverage_mean,coverage_min,coverage_max,ape_rmse_mean,ape_rmse_min,"
             "ape_rmse_max,ape_mean_mean,ape_mean_min,ape_mean_max\n";
  bool all_ok = true;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    std::vector<double> time, traj, cov, rmse, mean;
    int completed = 0, episodes = 0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].cell != ci) continue;
      ++episodes;
      const auto& m = results[i];
      if (!errors[i].empty() || m.failed || !m.completed) all_ok = false;
      if (!errors[i].empty()) continue;
      completed += m.completed ? 1 : 0;
      time.push_back(m.completed ? m.completion_time : m.end_time);
      traj.push_back(m.trajectory_length);
      cov.push_back(m.coverage_final);
      rmse.push_back(m.ape_proxy_rmse);
      mean.push_back(m.ape_proxy_mean);
    }
    summary << cells[ci].label << ',' << episodes << ',' << completed;
    for (const auto& v : {time, traj, cov, rmse, mean}) {
      const Stats s = stats(v);
      summary << ',' << num(s.mean) << ',' << num(s.min) << ',' << num(s.max);
    }
    summary << '\n';
  }
  return all_ok ? 0 : 1;
}
