#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "wdro/app.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Workdir {
 public:
  Workdir() {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("wdro_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  ~Workdir() { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

 private:
  fs::path dir_;
};

CliRun run(const Workdir& w, const std::string& args) {
  const fs::path o = w.path("stdout.txt"), e = w.path("stderr.txt");
  const std::string cmd = std::string(WDRO_CLI_PATH) + " " + args + " > " + o.string() + " 2> " + e.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string config(const std::string& name) { return std::string(WDRO_CONFIG_DIR) + "/" + name; }

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

const char* kHeaderPrefix = "radius,status,in_sample,lambda,oos_mean,oos_median,oos_q10,oos_q90,oos_std,time_s";

// Small production setup, quick enough for repeated runs.
const char* kSmallProduction = R"({
  "kind": "production", "order_k": 1, "radii": [0, 0.05],
  "production": {"n1": 2, "np": 2, "N": 3},
  "seeds": {"train": 3, "eval": 4}, "eval_count": 300
})";

}  // namespace

TEST(CliSolve, SeparableExampleValue) {
  Workdir w;
  const CliRun r = run(w, "solve --config " + config("separable.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines_of(r.out);
  ASSERT_EQ(ls.size(), 2u);
  EXPECT_EQ(ls[0], std::string(kHeaderPrefix) + ",x1");
  const auto f = fields(ls[1]);
  ASSERT_EQ(f.size(), 11u);
  EXPECT_EQ(f[0], "0.25");
  EXPECT_EQ(f[1], "optimal");
  EXPECT_NEAR(std::stod(f[2]), 0.25, 1e-5);
  EXPECT_TRUE(f[4].empty());  // no sampling distribution, no out-of-sample fields
}

TEST(CliSolve, RadiusOverride) {
  Workdir w;
  const CliRun r = run(w, "solve --config " + config("separable.json") + " --radius 0.1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(std::stod(fields(lines_of(r.out)[1])[2]), 0.1, 1e-5);
}

TEST(CliSolve, UnboundedExamplesExitOneNamingSample) {
  Workdir w;
  for (const char* name : {"orthant.json", "strip.json"}) {
    const CliRun r = run(w, std::string("solve --config ") + config(name));
    EXPECT_EQ(r.code, 1) << name;
    EXPECT_NE(r.err.find("unbounded at sample 1"), std::string::npos) << r.err;
    EXPECT_EQ(fields(lines_of(r.out)[1])[1], "unbounded");
  }
}

TEST(CliSolve, ConfigErrorsExitTwo) {
  Workdir w;
  const auto empty = w.write("empty.json", R"({"kind": "single", "radii": [],
    "instance": {"n1": 1, "n0": 1, "F": "xi1", "samples": [[0]], "lo": [0], "hi": [0]}})");
  CliRun r = run(w, "solve --config " + empty.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("radii"), std::string::npos) << r.err;

  const auto broken = w.write("broken.json", "{\n  \"kind\": \"single\",\n  \"radii\": [0.1\n}");
  r = run(w, "solve --config " + broken.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 4"), std::string::npos) << r.err;

  EXPECT_EQ(run(w, "solve --config " + w.path("absent.json").string()).code, 2);
  EXPECT_EQ(run(w, "solve --config " + config("separable_sweep.json")).code, 2);  // several radii
  EXPECT_EQ(run(w, "solve --config " + config("separable.json") + " --radius -1").code, 2);
  EXPECT_EQ(run(w, "solve").code, 2);
  EXPECT_EQ(run(w, "frobnicate").code, 2);
  EXPECT_EQ(run(w, "").code, 2);
}

TEST(CliSolve, OrderBelowMinimumExitsTwo) {
  Workdir w;
  const auto low = w.write("low.json", R"({"kind": "single", "order_k": 1, "radii": [0.1],
    "instance": {"n1": 1, "n0": 2, "F": "xi1^3 + xi2", "h": ["1 - xi1^2", "1 - xi2^2"],
                 "samples": [[0, 0]], "lo": [0], "hi": [0]}})");
  const CliRun r = run(w, "solve --config " + low.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("minimum order"), std::string::npos) << r.err;
}

TEST(CliSolve, ExitCodeMapping) {
  EXPECT_EQ(wdro::app::exit_code_for("optimal"), 0);
  EXPECT_EQ(wdro::app::exit_code_for("unbounded"), 1);
  EXPECT_EQ(wdro::app::exit_code_for("infeasible"), 1);
  EXPECT_EQ(wdro::app::exit_code_for("numerical_failure"), 3);
}

TEST(CliSolve, IterateLog) {
  Workdir w;
  const auto log = w.path("iterates.csv");
  const CliRun r = run(w, "solve --config " + config("separable.json") + " --iterate-log " + log.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines_of(slurp(log));
  ASSERT_GE(ls.size(), 2u);
  EXPECT_EQ(ls[0], "radius,iter,x1,lambda,value,gap");
  const auto last = fields(ls.back());
  ASSERT_EQ(last.size(), 6u);
  EXPECT_EQ(last[0], "0.25");
  EXPECT_GE(std::stod(last[5]), 0.0);
  double best = 1e300;
  for (std::size_t i = 1; i < ls.size(); ++i) best = std::min(best, std::stod(fields(ls[i])[4]));
  EXPECT_NEAR(best, std::stod(fields(lines_of(r.out)[1])[2]), 1e-9);
}

TEST(CliSweep, SeparableGridMonotone) {
  Workdir w;
  const CliRun r = run(w, "sweep --config " + config("separable_sweep.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines_of(r.out);
  ASSERT_EQ(ls.size(), 5u);
  const std::vector<double> radii{0, 0.1, 0.25, 0.4};
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const auto f = fields(ls[i + 1]);
    EXPECT_EQ(f[1], "optimal");
    EXPECT_NEAR(std::stod(f[2]), radii[i], 1e-5);
  }
  EXPECT_TRUE(fields(ls[1])[3].empty());  // r = 0 goes through the sample average, no multiplier
}

TEST(CliSweep, ProductionRowsAndReproducibility) {
  Workdir w;
  const auto cfg = w.write("small.json", kSmallProduction);
  const auto a = w.path("a.csv"), b = w.path("b.csv");
  const CliRun ra = run(w, "sweep --no-time --threads 2 --config " + cfg.string() + " --out " + a.string());
  const CliRun rb = run(w, "sweep --no-time --threads 1 --config " + cfg.string() + " --out " + b.string());
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(rb.code, 0) << rb.err;
  const std::string text = slurp(a);
  EXPECT_EQ(text, slurp(b));
  const auto ls = lines_of(text);
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(ls[0], std::string(kHeaderPrefix) + ",x1,x2");
  const auto r0 = fields(ls[1]), r1 = fields(ls[2]);
  EXPECT_EQ(r0[9], "0");
  for (std::size_t c = 4; c <= 8; ++c) EXPECT_FALSE(r0[c].empty());
  EXPECT_LE(std::stod(r0[6]), std::stod(r0[5]));
  EXPECT_LE(std::stod(r0[5]), std::stod(r0[7]));
  EXPECT_GE(std::stod(r1[2]), std::stod(r0[2]) - 1e-6 * (1 + std::abs(std::stod(r0[2]))));

  // The r = 0 row is the sample-average problem.
  const wdro::RunConfig rc = wdro::parse_config(kSmallProduction);
  const auto inst = std::get<wdro::TwoStageInstance>(wdro::build_instance(rc));
  const double eso = wdro::solve_eso(inst).value;
  EXPECT_NEAR(std::stod(r0[2]), eso, 1e-6 * (1 + std::abs(eso)));
}

TEST(CliSweep, ZeroRadiusOnlyIsSampleAverage) {
  Workdir w;
  const auto cfg = w.write("small.json", kSmallProduction);
  const CliRun r = run(w, "sweep --no-time --radius 0 --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines_of(r.out);
  ASSERT_EQ(ls.size(), 2u);
  EXPECT_EQ(fields(ls[1])[0], "0");
  EXPECT_TRUE(fields(ls[1])[3].empty());
}

TEST(CliSweep, UnboundedRowRecordedAndSweepContinues) {
  Workdir w;
  const auto cfg = w.write("strip.json", R"({"kind": "two_stage", "order_k": 2, "radii": [0, 0.1],
    "instance": {"n1": 1, "n0": 1, "n2": 1, "m2": 1, "A": [[-1]], "B": [["0"]], "b": ["-1 + xi1"],
                 "c": ["0"], "d": "0", "h": ["1 - xi1^2"], "samples": [[0]], "lo": [0], "hi": [0]}})");
  const CliRun r = run(w, "sweep --no-time --config " + cfg.string());
  EXPECT_EQ(r.code, 1);
  const auto ls = lines_of(r.out);
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(fields(ls[1])[1], "optimal");
  EXPECT_EQ(fields(ls[2])[1], "unbounded");
}

TEST(CliEval, ZeroDecisionMatchesStraightLineEvaluator) {
  Workdir w;
  const auto dec = w.write("zero.txt", "0 0 0 0 0\n");
  const CliRun r = run(w, "eval --config " + config("production_desk.json") + " --decision " + dec.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines_of(r.out);
  ASSERT_EQ(ls.size(), 1u + 10000u + 5u);
  EXPECT_EQ(ls[0], "sample_index,value");
  EXPECT_EQ(fields(ls[1])[0], "1");
  const wdro::RunConfig rc = wdro::load_config(config("production_desk.json"));
  const oracle::Stats o = oracle::production_oos(rc.production->params, Eigen::VectorXd::Zero(5), rc.eval_seed, rc.eval_count);
  const std::vector<std::pair<std::string, double>> summary{
      {"mean", o.mean}, {"median", o.median}, {"q10", o.q10}, {"q90", o.q90}, {"std", o.std}};
  for (std::size_t i = 0; i < summary.size(); ++i) {
    const auto f = fields(ls[10001 + i]);
    EXPECT_EQ(f[0], summary[i].first);
    // 12 significant digits in the CSV.
    EXPECT_NEAR(std::stod(f[1]), summary[i].second, 1e-10 * (1 + std::abs(summary[i].second)));
  }
}

TEST(CliEval, SingleSampleHasZeroStd) {
  Workdir w;
  const auto cfg = w.write("one.json", R"({"kind": "production", "radii": [0], "eval_count": 1,
    "production": {"n1": 2, "np": 2}})");
  const auto dec = w.write("x.txt", "1,1\n");
  const CliRun r = run(w, "eval --config " + cfg.string() + " --decision " + dec.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines_of(r.out).back(), "std,0");
}

TEST(CliEval, SeedsGiveStatisticallyConsistentMeans) {
  Workdir w;
  const auto dec = w.write("x.txt", "1 1 1 1 1\n");
  std::vector<double> means, stds;
  for (int seed : {2, 3}) {
    const auto cfg = w.write("s.json", R"({"kind": "production", "radii": [0], "eval_count": 10000,
      "seeds": {"eval": )" + std::to_string(seed) + R"(}, "production": {"n1": 5, "np": 5}})");
    const CliRun r = run(w, "eval --config " + cfg.string() + " --decision " + dec.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ls = lines_of(r.out);
    means.push_back(std::stod(fields(ls[ls.size() - 5])[1]));
    stds.push_back(std::stod(fields(ls.back())[1]));
  }
  EXPECT_NE(means[0], means[1]);
  const double se = std::sqrt((stds[0] * stds[0] + stds[1] * stds[1]) / 10000.0);
  EXPECT_LE(std::abs(means[0] - means[1]), 3 * se);
}

TEST(CliEval, DecisionFromSolveOutput) {
  Workdir w;
  const auto cfg = w.write("small.json", kSmallProduction);
  const auto sol = w.path("sol.csv");
  ASSERT_EQ(run(w, "solve --no-time --radius 0.05 --config " + cfg.string() + " --out " + sol.string()).code, 0);
  const CliRun r = run(w, "eval --config " + cfg.string() + " --decision " + sol.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto row = fields(lines_of(slurp(sol))[1]);
  const auto mean_line = fields(lines_of(r.out)[301]);
  EXPECT_EQ(mean_line[0], "mean");
  EXPECT_EQ(mean_line[1], row[4]);  // the solve row already carries the same statistics
}

TEST(CliEval, ErrorsExitTwo) {
  Workdir w;
  const auto dec = w.write("short.txt", "1 2 3\n");
  CliRun r = run(w, "eval --config " + config("production_desk.json") + " --decision " + dec.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("expects 5"), std::string::npos) << r.err;
  const auto junk = w.write("junk.txt", "1 two 3 4 5\n");
  EXPECT_EQ(run(w, "eval --config " + config("production_desk.json") + " --decision " + junk.string()).code, 2);
  EXPECT_EQ(run(w, "eval --config " + config("production_desk.json") + " --decision " + w.path("none").string()).code, 2);
  const auto one = w.write("one.txt", "0\n");
  EXPECT_EQ(run(w, "eval --config " + config("separable.json") + " --decision " + one.string()).code, 2);
}

TEST(CliVerify, ReportIsConsistent) {
  Workdir w;
  const CliRun r = run(w, "verify");
  const auto ls = lines_of(r.out);
  ASSERT_GE(ls.size(), 2u);
  std::size_t fails = 0, total = 0;
  for (std::size_t i = 0; i + 1 < ls.size(); ++i) {
    const bool pass = ls[i].rfind("PASS", 0) == 0;
    EXPECT_TRUE(pass || ls[i].rfind("FAIL", 0) == 0) << ls[i];
    EXPECT_NE(ls[i].find("expected:"), std::string::npos);
    EXPECT_NE(ls[i].find("got:"), std::string::npos);
    if (!pass) ++fails;
    ++total;
    // Order-2 fixtures and the exactness checks are expected to pass.
    if (ls[i].find("k=3") == std::string::npos) {
      EXPECT_TRUE(pass) << ls[i];
    }
  }
  EXPECT_EQ(ls.back(), std::to_string(total - fails) + "/" + std::to_string(total) + " fixtures passed");
  EXPECT_EQ(r.code, fails == 0 ? 0 : 1);
}
