// wdro: batch driver for the moment-relaxation DRO solver.
//   wdro solve  --config C [--radius r] [--out F] [--iterate-log L]
//   wdro sweep  --config C [--out F] [--iterate-log L]
//   wdro eval   --config C --decision D [--out F]
//   wdro verify
// Exit codes: 0 success, 1 unbounded or infeasible, 2 usage or config
// error, 3 numerical failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "wdro/app.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"Wasserstein DRO via moment relaxations"};
  cli.require_subcommand(1);

  std::string config_path, out_path, decision_path, iterate_path;
  std::optional<double> radius;
  std::size_t threads = 0;
  bool verbose = false, no_time = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "JSON configuration file");
    if (needs_config) c->required();
    sub->add_option("--out", out_path, "CSV output file (default stdout)");
    sub->add_option("--threads", threads, "worker threads, 0 = hardware concurrency");
    sub->add_flag("--verbose", verbose, "log solver progress to stderr");
  };

  auto* solve = cli.add_subcommand("solve", "solve at one radius");
  add_common(solve, true);
  solve->add_option("--radius", radius, "Wasserstein radius (overrides the config)");
  solve->add_flag("--no-time", no_time, "write time_s = 0 for reproducible output");
  solve->add_option("--iterate-log", iterate_path, "CSV of bundle iterates (iter, x, lambda, value, gap)");

  auto* sweep = cli.add_subcommand("sweep", "solve over the configured radius grid");
  add_common(sweep, true);
  sweep->add_option("--radius", radius, "solve this radius only");
  sweep->add_flag("--no-time", no_time, "write time_s = 0 for reproducible output");
  sweep->add_option("--iterate-log", iterate_path, "CSV of bundle iterates (iter, x, lambda, value, gap)");

  auto* eval = cli.add_subcommand("eval", "out-of-sample evaluation of a decision");
  add_common(eval, true);
  eval->add_option("--decision", decision_path, "decision vector or solve/sweep CSV")->required();

  auto* verify = cli.add_subcommand("verify", "run the built-in fixtures");
  add_common(verify, false);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return wdro::app::kUsage;
  }

  wdro::app::RunOptions opt;
  opt.threads = threads;
  opt.verbose = verbose;
  opt.record_time = !no_time;

  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) {
      std::cerr << "wdro: cannot write '" << out_path << "'\n";
      return wdro::app::kUsage;
    }
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  std::ofstream iterates;
  if (!iterate_path.empty()) {
    iterates.open(iterate_path);
    if (!iterates) {
      std::cerr << "wdro: cannot write '" << iterate_path << "'\n";
      return wdro::app::kUsage;
    }
    opt.iterate_log = &iterates;
  }

  try {
    if (*verify) return wdro::app::cmd_verify(out, opt);
    const wdro::RunConfig cfg = wdro::load_config(config_path);
    if (*solve) return wdro::app::cmd_solve(cfg, radius, out, std::cerr, opt);
    if (*sweep) return wdro::app::cmd_sweep(cfg, radius, out, std::cerr, opt);
    return wdro::app::cmd_eval(cfg, wdro::app::read_decision(decision_path), out, opt);
  } catch (const wdro::ConfigError& e) {
    std::cerr << "wdro: " << e.what() << '\n';
    return wdro::app::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "wdro: " << e.what() << '\n';
    return wdro::app::kNumerical;
  }
}
