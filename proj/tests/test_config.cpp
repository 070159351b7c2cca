#include <fstream>

#include "idguard/config.hpp"
#include "test_util.hpp"

using namespace idtest;
using nlohmann::json;

TEST_CASE("default toy config validates and round-trips through json") {
  RunConfig c = default_toy_config();
  c.validate();
  RunConfig c2 = config_from_json(c.to_json());
  CHECK(c2.to_json() == c.to_json());
  CHECK(c2.epsilon == 0.05);
  CHECK(c2.pgd.iters == 10);
  CHECK(c2.pgd.step == 0.01);
  CHECK(c2.optimizer.learning_rate == 1e-4);
  CHECK(c2.thresholds.l2face == 0.05);
  CHECK(c2.thresholds.id_sim == 0.4);
}

TEST_CASE("unknown keys are a hard error") {
  json j = default_toy_config().to_json();
  j["whatever"] = 1;
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("unknown config key: whatever"),
                       std::invalid_argument);
  json j2 = default_toy_config().to_json();
  j2["pgd"]["stepsize"] = 0.2;
  CHECK_THROWS_WITH_AS(config_from_json(j2), doctest::Contains("pgd.stepsize"),
                       std::invalid_argument);
  json j3 = default_toy_config().to_json();
  j3["models"][0]["depth"] = 4;
  CHECK_THROWS_WITH_AS(config_from_json(j3), doctest::Contains("models.0.depth"),
                       std::invalid_argument);
}

TEST_CASE("invariant violations are rejected") {
  json base = default_toy_config().to_json();
  {
    json j = base;
    j["epsilon"] = -0.1;
    CHECK_THROWS_AS(config_from_json(j), std::invalid_argument);
  }
  {
    json j = base;
    j["pgd"]["step"] = 0.2;  // > epsilon
    CHECK_THROWS_AS(config_from_json(j), std::invalid_argument);
  }
  {
    json j = base;
    j["image_size"] = 16;
    CHECK_THROWS_AS(config_from_json(j), std::invalid_argument);
  }
  {
    json j = base;
    j["weighting"]["strategy"] = "kpi";
    j["weighting"]["alpha"] = {1.0, 2.0};  // 2 weights for 3 models
    CHECK_THROWS_AS(config_from_json(j), std::invalid_argument);
  }
  {
    json j = base;
    j["weighting"]["strategy"] = "equivalent";
    j["weighting"]["alpha"] = json::array();
    CHECK_NOTHROW(config_from_json(j));  // alpha only required for prior/kpi
  }
}

TEST_CASE("dotted overrides parse and echo into the resolved config") {
  json j = default_toy_config().to_json();
  apply_override(j, "weighting.strategy=mgda");
  apply_override(j, "epsilon=0.07");
  apply_override(j, "pgd.step=0.02");
  apply_override(j, "models.0.epochs=3");
  apply_override(j, "weighting.alpha=[1,10,100]");
  RunConfig c = config_from_json(j);
  CHECK(c.weighting.strategy == WeightStrategy::kMgda);
  CHECK(c.epsilon == 0.07);
  CHECK(c.models[0].epochs == 3);
  CHECK(c.weighting.alpha == std::vector<double>{1.0, 10.0, 100.0});
  // override round-trip: the resolved dump carries the override values
  json dump = c.to_json();
  CHECK(dump["epsilon"] == 0.07);
  CHECK(dump["weighting"]["strategy"] == "mgda");
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), std::invalid_argument);
}

TEST_CASE("config file loading") {
  TempDir tmp("idguard_config");
  const std::string path = tmp.path + "/cfg.json";
  {
    std::ofstream os(path);
    os << default_toy_config().to_json().dump(2);
  }
  RunConfig c = load_config(path, {"seed=123"});
  CHECK(c.seed == 123);
  CHECK_THROWS(load_config(tmp.path + "/missing.json"));
}
