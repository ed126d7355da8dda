#include <fmt/format.h>

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "fidgap/attack_pipeline.hpp"
#include "fidgap/config.hpp"
#include "fidgap/gradient_check.hpp"
#include "fidgap/report_io.hpp"

namespace fs = std::filesystem;
using namespace fidgap;

namespace {

constexpr int kOk = 0;
constexpr int kStageFailure = 1;
constexpr int kUsage = 2;

std::mutex log_mutex;
bool verbose = false;

template <class... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  if (!verbose) return;
  std::lock_guard lock(log_mutex);
  fmt::print(stderr, "{}\n", fmt::format(f, std::forward<Args>(args)...));
}

int fail(const std::string& stage, const std::string& message) {
  std::lock_guard lock(log_mutex);
  fmt::print(stderr, "error [{}]: {}\n", stage, message);
  return kStageFailure;
}

io::RunConfig load_config(const std::string& path) {
  if (path.empty()) return io::RunConfig{};
  return io::parse_config(path, false);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string profile;
  std::string config;
  std::string out = "trajectory.csv";
  std::optional<double> soc_init;
  double i_init = 0.0;
};

int simulate(const SimulateArgs& a) {
  io::RunConfig cfg;
  try {
    cfg = load_config(a.config);
  } catch (const io::ConfigError& e) {
    return fail("config", e.what());
  }
  std::vector<double> profile;
  try {
    profile = io::read_profile_csv(a.profile);
  } catch (const std::exception& e) {
    return fail("input", e.what());
  }
  try {
    const double soc0 = a.soc_init.value_or(cfg.pipeline.soc_init);
    const auto traj = spm::simulate(cfg.pipeline.spm, soc0, profile, a.i_init);
    io::write_trajectory_csv(a.out, traj);
    fmt::print("simulated {} control periods of {:g} s; final bulk SoC {:.6f}, {} flagged samples -> {}\n",
               profile.size(), cfg.pipeline.spm.dt * cfg.pipeline.spm.substeps, traj.soc_bulk.back(),
               traj.flagged.size(), a.out);
  } catch (const std::exception& e) {
    return fail("simulate", e.what());
  }
  return kOk;
}

// --- identify --------------------------------------------------------------

struct IdentifyArgs {
  std::string trajectory;
  std::string config;
  std::string out;
};

int identify(const IdentifyArgs& a) {
  io::RunConfig cfg;
  try {
    cfg = load_config(a.config);
  } catch (const io::ConfigError& e) {
    return fail("config", e.what());
  }
  spm::Trajectory traj;
  try {
    traj = io::read_trajectory_csv(a.trajectory);
  } catch (const std::exception& e) {
    return fail("input", e.what());
  }
  try {
    auto opts = cfg.pipeline.identification;
    opts.area = cfg.pipeline.area;
    const auto report = rint::identify(traj, opts);
    const auto text = io::identification_json(report);
    if (a.out.empty()) {
      fmt::print("{}", text);
    } else {
      std::ofstream(a.out) << text;
      fmt::print("q_c = {:.6g} C ({:.6g} Ah), r_0 = {:.6g} Ohm, OCV RMS = {:.3g} V -> {}\n", report.params.q_c,
                 report.params.capacity_ah(), report.params.r_0, report.ocv.rms_residual, a.out);
    }
    for (const auto& w : report.warnings) fmt::print(stderr, "warning: {}\n", w);
  } catch (const std::exception& e) {
    return fail("identification", e.what());
  }
  return kOk;
}

// --- attack ----------------------------------------------------------------

struct AttackArgs {
  std::string config;
  std::string levels;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
};

std::vector<fs::path> level_dirs(const fs::path& root, const std::vector<AttackLevel>& levels) {
  std::vector<fs::path> dirs;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::string name = levels[i].label.empty() ? "level" : levels[i].label;
    for (std::size_t j = 0; j < i; ++j) {
      if (levels[j].label == levels[i].label) {
        name += fmt::format("-{}", i);
        break;
      }
    }
    dirs.push_back(root / name);
  }
  return dirs;
}

int run_attack(const AttackArgs& a) {
  io::RunConfig cfg;
  try {
    cfg = load_config(a.config);
    if (!a.levels.empty()) cfg.levels = io::parse_level_list(a.levels);
    if (!a.out.empty()) cfg.output_dir = a.out;
    if (a.seed) cfg.pipeline.seed = *a.seed;
    cfg.pipeline.validate();
    fs::create_directories(cfg.output_dir);
    std::ofstream echo(fs::path(cfg.output_dir) / "config.resolved.json");
    if (!echo) throw io::ConfigError("output_dir", fmt::format("'{}' is not writable", cfg.output_dir));
    echo << io::to_json_text(cfg);
  } catch (const std::exception& e) {
    return fail("config", e.what());
  }

  const auto t0 = std::chrono::steady_clock::now();
  info("baseline stages (excitation, identification, benign reference, nominal fit)");
  std::shared_ptr<const attack::Baseline> baseline;
  try {
    baseline = attack::prepare_baseline(cfg.pipeline);
  } catch (const attack::StageFailure& e) {
    return fail(e.stage(), e.what());
  }
  info("baseline done in {:.1f} s: q_c = {:.6g} C, r_0 = {:.4g} Ohm, nominal theta = ({:.6g}, {:.6g})",
       seconds_since(t0), baseline->rint.q_c, baseline->rint.r_0, baseline->theta_nominal.q,
       baseline->theta_nominal.r);

  const auto dirs = level_dirs(cfg.output_dir, cfg.levels);
  std::vector<std::optional<attack::LevelRow>> rows(cfg.levels.size());
  std::vector<std::string> errors(cfg.levels.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.levels.size(); i = next++) {
      const auto& level = cfg.levels[i];
      const auto t1 = std::chrono::steady_clock::now();
      info("level {}: started", level.label);
      try {
        const auto report = attack::run_dstab(cfg.pipeline, level, baseline);
        io::write_report_dir(dirs[i], report);
        rows[i] = attack::summarize(report);
        info("level {}: done in {:.1f} s", level.label, seconds_since(t1));
      } catch (const attack::StageFailure& e) {
        errors[i] = fmt::format("[{}] {}", e.stage(), e.what());
        if (e.partial()) {
          try {
            io::write_report_dir(dirs[i], *e.partial());
          } catch (const std::exception&) {
          }
        }
      } catch (const std::exception& e) {
        errors[i] = fmt::format("[report] {}", e.what());
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto jobs = std::min<std::size_t>(cfg.levels.size(), a.jobs > 0 ? static_cast<std::size_t>(a.jobs) : hw);
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fmt::print("{:<10} {:>9} {:>9} {:>10} {:>10} {:>12} {:>12}  {}\n", "level", "gamma1", "gamma2", "satisfied",
             "nominal", "mean_margin", "fit_loss", "report");
  int status = kOk;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    if (rows[i]) {
      const auto& r = *rows[i];
      fmt::print("{:<10} {:>9.3g} {:>9.3g} {:>10} {:>10} {:>12.4e} {:>12.4e}  {}\n", r.label, r.gamma1, r.gamma2,
                 r.satisfied_count, r.nominal_count, r.mean_positive_margin, r.fit_loss, dirs[i].string());
    } else {
      fail(cfg.levels[i].label, errors[i]);
      status = kStageFailure;
    }
  }
  return status;
}

// --- verify-gradients ------------------------------------------------------

int verify_gradients(int seeds, std::uint64_t first, double threshold) {
  fmt::print("{:>6} {:>6} {:>12} {:>14} {:>14} {:>14} {:>14} {:>10} {:>9}\n", "seed", "steps", "loss", "pdp_dq",
             "pdp_dr", "fd_dq", "fd_dr", "rel_err", "fallback");
  int bad = 0;
  int clean = 0;
  for (int i = 0; i < seeds; ++i) {
    const auto seed = first + static_cast<std::uint64_t>(i);
    try {
      const auto c = inverse::random_gradient_case(seed);
      const auto r = inverse::check_gradient(c);
      fmt::print("{:>6} {:>6} {:>12.4e} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>10.2e} {:>9}\n", seed,
                 c.scenario.steps, r.loss, r.pdp(0), r.pdp(1), r.fd(0), r.fd(1), r.rel_error, r.fallback_steps);
      if (!(r.rel_error < threshold)) ++bad;
      if (r.fallback_steps == 0) ++clean;
    } catch (const std::exception& e) {
      fmt::print("{:>6} error: {}\n", seed, e.what());
      ++bad;
    }
  }
  fmt::print("{} of {} cases below {:g}; {} without active-set fallback\n", seeds - bad, seeds, threshold, clean);
  return bad == 0 ? kOk : kStageFailure;
}

// --- compare ---------------------------------------------------------------

int compare(const std::vector<std::string>& dirs) {
  std::vector<attack::LevelRow> rows;
  try {
    for (const auto& d : dirs) rows.push_back(io::read_summary(d));
  } catch (const std::exception& e) {
    return fail("input", e.what());
  }
  try {
    const auto cmp = attack::compare_levels(rows);
    fmt::print("{:<10} {:>9} {:>9} {:>10} {:>10} {:>12}\n", "level", "gamma1", "gamma2", "satisfied", "nominal",
               "mean_margin");
    for (const auto& r : cmp.rows) {
      fmt::print("{:<10} {:>9.3g} {:>9.3g} {:>10} {:>10} {:>12.4e}\n", r.label, r.gamma1, r.gamma2, r.satisfied_count,
                 r.nominal_count, r.mean_positive_margin);
    }
    fmt::print("monotone: {}\n", cmp.monotone ? "yes" : "no");
  } catch (const std::exception& e) {
    return fail("compare", e.what());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fidelity-gap attack on MPC battery charging: SPM plant, Rint controller, inverse fit", "fidgap"};
  app.require_subcommand(1);
  app.add_flag("-v,--verbose", verbose, "Progress messages on stderr");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Roll the SPM through a current profile CSV");
  sim_cmd->add_option("--profile", sim.profile, "CSV with current_A_per_m2 per control period")
      ->required()
      ->check(CLI::ExistingFile);
  sim_cmd->add_option("--config", sim.config, "Run configuration (SPM parameters)")->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sim.out, "Trajectory CSV to write")->capture_default_str();
  sim_cmd->add_option("--soc-init", sim.soc_init, "Initial bulk SoC (default from config)");
  sim_cmd->add_option("--i-init", sim.i_init, "Current before the first period, A/m^2");

  IdentifyArgs id;
  auto* id_cmd = app.add_subcommand("identify", "Fit Rint parameters to a trajectory CSV");
  id_cmd->add_option("--trajectory", id.trajectory, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  id_cmd->add_option("--config", id.config, "Run configuration (identification options, area)")
      ->check(CLI::ExistingFile);
  id_cmd->add_option("--out", id.out, "Write the identification report here instead of stdout");

  AttackArgs at;
  auto* at_cmd = app.add_subcommand("attack", "Run the full pipeline for one or more attack levels");
  at_cmd->add_option("--config", at.config, "Run configuration")->check(CLI::ExistingFile);
  at_cmd->add_option("--level", at.levels, "Comma separated levels: low, medium, high (default from config)");
  at_cmd->add_option("--out", at.out, "Output directory (default from config)");
  at_cmd->add_option("--seed", at.seed, "Override the run seed");
  at_cmd->add_option("--jobs", at.jobs, "Worker threads across levels (default: hardware threads)")
      ->check(CLI::NonNegativeNumber);
  at_cmd->add_flag("--verbose", verbose, "Progress messages on stderr");

  int seeds = 20;
  std::uint64_t first_seed = 1;
  double threshold = 1e-4;
  auto* vg_cmd = app.add_subcommand("verify-gradients", "Compare PDP gradients with central differences");
  vg_cmd->add_option("--seeds", seeds, "Number of random scenarios")->check(CLI::PositiveNumber)->capture_default_str();
  vg_cmd->add_option("--first-seed", first_seed, "Seed of the first scenario")->capture_default_str();
  vg_cmd->add_option("--threshold", threshold, "Relative error bound")->capture_default_str();

  std::vector<std::string> dirs;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare report directories of different attack levels");
  cmp_cmd->add_option("dirs", dirs, "Report directories")->required()->expected(2, -1)->check(CLI::ExistingDirectory);

  if (argc <= 1) {
    std::cerr << app.help();
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (*sim_cmd) return simulate(sim);
  if (*id_cmd) return identify(id);
  if (*at_cmd) return run_attack(at);
  if (*vg_cmd) return verify_gradients(seeds, first_seed, threshold);
  if (*cmp_cmd) return compare(dirs);
  return kUsage;
}
