#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "wdro/config.hpp"

using namespace wdro;

namespace {

std::string config_path(const std::string& name) { return std::string(WDRO_CONFIG_DIR) + "/" + name; }

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kSingle = R"({
  "kind": "single",
  "radii": [0.1, 0.2],
  "instance": {"n1": 1, "n0": 1, "F": "x1*xi1", "samples": [[0]], "lo": [-1], "hi": [1]}
})";

template <typename Inst>
void expect_common_equal(const Inst& a, const Inst& b) {
  EXPECT_EQ(a.n1, b.n1);
  EXPECT_EQ(a.n0, b.n0);
  EXPECT_EQ(a.f, b.f);
  ASSERT_EQ(a.h.size(), b.h.size());
  for (std::size_t i = 0; i < a.h.size(); ++i) EXPECT_EQ(a.h[i], b.h[i]);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i], b.samples[i]);
  EXPECT_EQ(a.H, b.H);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_EQ(a.support_bounded, b.support_bounded);
  EXPECT_EQ(a.p, b.p);
}

void expect_run_equal(const RunConfig& a, const RunConfig& b) {
  EXPECT_EQ(a.kind, b.kind);
  EXPECT_EQ(a.radii, b.radii);
  EXPECT_EQ(a.order_k, b.order_k);
  EXPECT_EQ(a.p, b.p);
  EXPECT_EQ(a.strengthen, b.strengthen);
  EXPECT_EQ(a.epsilon, b.epsilon);
  EXPECT_EQ(a.train_seed, b.train_seed);
  EXPECT_EQ(a.eval_seed, b.eval_seed);
  EXPECT_EQ(a.eval_count, b.eval_count);
  EXPECT_EQ(a.tol.sdp, b.tol.sdp);
  EXPECT_EQ(a.tol.bundle, b.tol.bundle);
  EXPECT_EQ(a.tol.bundle_max_iters, b.tol.bundle_max_iters);
  ASSERT_EQ(a.single.has_value(), b.single.has_value());
  ASSERT_EQ(a.two_stage.has_value(), b.two_stage.has_value());
  ASSERT_EQ(a.production.has_value(), b.production.has_value());
  if (a.single) {
    expect_common_equal(*a.single, *b.single);
    EXPECT_EQ(a.single->F, b.single->F);
  }
  if (a.two_stage) {
    const auto &s = *a.two_stage, &t = *b.two_stage;
    expect_common_equal(s, t);
    EXPECT_EQ(s.n2, t.n2);
    EXPECT_EQ(s.m2, t.m2);
    EXPECT_EQ(s.A, t.A);
    ASSERT_EQ(s.B.size(), t.B.size());
    for (std::size_t l = 0; l < s.B.size(); ++l) {
      for (std::size_t j = 0; j < s.n1; ++j) EXPECT_EQ(s.B[l][j], t.B[l][j]);
      EXPECT_EQ(s.b[l], t.b[l]);
    }
    for (std::size_t j = 0; j < s.m2; ++j) EXPECT_EQ(s.c[j], t.c[j]);
    EXPECT_EQ(s.d, t.d);
    ASSERT_EQ(s.extra.size(), t.extra.size());
    for (std::size_t i = 0; i < s.extra.size(); ++i) EXPECT_EQ(s.extra[i], t.extra[i]);
  }
  if (a.production) {
    const auto &p = a.production->params, &q = b.production->params;
    EXPECT_EQ(a.production->N, b.production->N);
    EXPECT_EQ(p.n1, q.n1);
    EXPECT_EQ(p.np, q.np);
    EXPECT_EQ(p.D, q.D);
    EXPECT_EQ(p.sigma, q.sigma);
    EXPECT_EQ(p.Bbar, q.Bbar);
    EXPECT_EQ(p.cp, q.cp);
    EXPECT_EQ(p.ci, q.ci);
    EXPECT_EQ(p.Am, q.Am);
    EXPECT_EQ(p.demand_cap_factor, q.demand_cap_factor);
  }
}

}  // namespace

TEST(ParseConfig, MinimalSingleStageDefaults) {
  const RunConfig c = parse_config(kSingle);
  EXPECT_EQ(c.kind, ProblemKind::Single);
  EXPECT_EQ(c.radii, (std::vector<double>{0.1, 0.2}));
  EXPECT_EQ(c.order_k, 1);
  EXPECT_EQ(c.p, 2);
  EXPECT_FALSE(c.strengthen);
  EXPECT_FALSE(c.epsilon.has_value());
  EXPECT_EQ(c.eval_count, 10000u);
  ASSERT_TRUE(c.single.has_value());
  EXPECT_EQ(c.single->H, Eigen::MatrixXd::Identity(1, 1));
  EXPECT_DOUBLE_EQ(c.single->F.evaluate(Eigen::Vector2d(2.0, 3.0)), 6.0);
}

TEST(ParseConfig, SyntaxErrorReportsLineAndColumn) {
  const std::string msg = error_of("{\n  \"kind\": \"single\",\n  \"radii\": [0.1,,]\n}");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column"), std::string::npos) << msg;
}

TEST(ParseConfig, FieldErrorsNameTheField) {
  std::string text = kSingle;
  const auto with = [&](const std::string& from, const std::string& to) {
    std::string t = text;
    t.replace(t.find(from), from.size(), to);
    return error_of(t);
  };
  EXPECT_NE(with("\"radii\": [0.1, 0.2]", "\"radii\": []").find("radii"), std::string::npos);
  EXPECT_NE(with("\"radii\": [0.1, 0.2]", "\"radii\": [0.2, 0.1]").find("increasing"), std::string::npos);
  EXPECT_NE(with("\"radii\": [0.1, 0.2]", "\"radii\": [-0.1]").find("nonnegative"), std::string::npos);
  EXPECT_NE(with("\"kind\": \"single\"", "\"kind\": \"triple\"").find("kind"), std::string::npos);
  EXPECT_NE(with("\"F\": \"x1*xi1\"", "\"F\": \"x1*xi7\"").find("instance.F"), std::string::npos);
  EXPECT_NE(with("\"samples\": [[0]]", "\"samples\": [[0, 1]]").find("instance.samples[0]"), std::string::npos);
  EXPECT_NE(with("\"lo\": [-1]", "\"lo\": [2]").find("instance"), std::string::npos);
  EXPECT_NE(with("\"kind\": \"single\"", "\"kind\": \"single\", \"wasserstein_p\": 3").find("wasserstein_p"),
            std::string::npos);
  EXPECT_NE(with("\"kind\": \"single\"", "\"kind\": \"single\", \"strengthen\": true").find("strengthen"),
            std::string::npos);
  EXPECT_NE(with("\"kind\": \"single\"", "\"kind\": \"single\", \"eval_count\": 0").find("eval_count"), std::string::npos);
  EXPECT_NE(error_of("[1, 2]").find("object"), std::string::npos);
}

TEST(ParseConfig, ProductionFields) {
  const RunConfig c = parse_config(R"({"kind": "production", "radii": [0],
    "production": {"n1": 3, "np": 2, "D": 4, "N": 7, "demand_cap_factor": 20}})");
  ASSERT_TRUE(c.production.has_value());
  EXPECT_EQ(c.production->N, 7u);
  EXPECT_EQ(c.production->params.D, 4.0);
  EXPECT_EQ(c.production->params.demand_cap_factor, 20.0);
  const auto inst = std::get<TwoStageInstance>(build_instance(c));
  EXPECT_EQ(inst.samples.size(), 7u);
  EXPECT_TRUE(inst.support_bounded);
  EXPECT_THROW(parse_config(R"({"kind": "production", "radii": [0], "production": {"n1": 1, "np": 2}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"kind": "production", "radii": [0], "wasserstein_p": 4,
    "production": {"n1": 2, "np": 2}})"), ConfigError);
}

TEST(LoadConfig, ShippedConfigsLoad) {
  std::size_t count = 0;
  for (const auto& e : std::filesystem::directory_iterator(WDRO_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
    ++count;
  }
  EXPECT_GE(count, 6u);
  EXPECT_THROW(load_config(config_path("missing.json")), ConfigError);
}

TEST(LoadConfig, DeskAndFullScaleShapes) {
  const RunConfig desk = load_config(config_path("production_desk.json"));
  EXPECT_EQ(desk.production->params.n1, 5u);
  EXPECT_EQ(desk.production->N, 10u);
  EXPECT_EQ(desk.radii, (std::vector<double>{0, 0.02, 0.05, 0.1}));
  const RunConfig full = load_config(config_path("production_full.json"));
  EXPECT_EQ(full.production->params.n1, 20u);
  EXPECT_EQ(full.production->params.np, 20u);
  EXPECT_EQ(full.radii.size(), 20u);
}

TEST(SerializeConfig, ShippedConfigsRoundTrip) {
  for (const auto& e : std::filesystem::directory_iterator(WDRO_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    const RunConfig a = load_config(e.path().string());
    const std::string text = serialize_config(a);
    const RunConfig b = parse_config(text);
    SCOPED_TRACE(e.path().string());
    expect_run_equal(a, b);
    EXPECT_EQ(serialize_config(b), text);
  }
}

TEST(SerializeConfig, RandomTwoStageRoundTrip) {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 10; ++t) {
    RunConfig c;
    c.kind = ProblemKind::TwoStage;
    c.two_stage = oracle::random_two_stage(rng, 1 + t % 2, 1 + t % 2, 2 + t % 3);
    c.radii = {0.0, 0.1 + 0.01 * t};
    c.order_k = 2;
    c.strengthen = t % 2 == 0;
    if (t % 3 == 0) c.epsilon = 0.125 * (t + 1);
    c.train_seed = 1000 + t;
    c.tol.sdp = 1e-9;
    const RunConfig back = parse_config(serialize_config(c));
    expect_run_equal(c, back);
  }
}

TEST(SerializeConfig, RandomSingleStageRoundTrip) {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 10; ++t) {
    RunConfig c;
    c.kind = ProblemKind::Single;
    c.single = oracle::random_single(rng, 1 + t % 3, 1 + t % 4, 2 + 2 * (t % 2));
    c.radii = {0.05};
    const RunConfig back = parse_config(serialize_config(c));
    expect_run_equal(c, back);
  }
}
