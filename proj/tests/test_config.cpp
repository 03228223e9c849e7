#include <doctest.h>

#include <fstream>

#include "freeup/config.hpp"
#include "support.hpp"

using namespace freeup;
using namespace freeup::config;
using nlohmann::json;

TEST_SUITE("config") {

TEST_CASE("run config round trip") {
  RunConfig c;
  c.train.learning_rate = 5e-4;
  c.train.seed = 42;
  c.model.widths = {8, 16};
  c.model.nonlinearity = nn::Nonlinearity::silu;
  c.ablation = training::Ablation::parse("no_freq_loss,static_fusion=weighted_sum");
  const json j = to_json(c);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.train.seed == 42);
  CHECK(back.model.widths == std::vector<int>{8, 16});
  CHECK(back.ablation.static_fusion == fusion::StaticMode::weighted_sum);
  CHECK(config_hash(j) == config_hash(to_json(back)));
  CHECK(config_hash(j) != config_hash(to_json(RunConfig{})));
}

TEST_CASE("field names mirror the train config and defaults fill gaps") {
  const json j = to_json(training::TrainConfig{});
  for (const char* k : {"learning_rate", "batch_size", "max_epochs", "lambda_nll", "lambda_pen", "lambda_f", "P", "D",
                        "seed", "patience", "n_runs"}) {
    CHECK(j.contains(k));
  }
  auto t = train_config_from_json(json{{"batch_size", 16}});
  CHECK(t.batch_size == 16);
  CHECK(t.learning_rate == 1e-3);
}

TEST_CASE("bad input is rejected") {
  CHECK_THROWS_AS(train_config_from_json(json{{"batchsize", 16}}), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json(json{{"batch_size", 0}}), std::invalid_argument);
  CHECK_THROWS_AS(ae_config_from_json(json{{"nonlinearity", "gelu"}}), std::invalid_argument);
  CHECK_THROWS_AS(ablation_from_json(json{{"no_low_branch", true}, {"no_high_branch", true}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(json{{"optim", json::object()}}), std::invalid_argument);

  testing::TempDir dir("config");
  std::ofstream(dir.path() / "bad.json") << "{ not json";
  CHECK_THROWS_AS(read_run_config(dir.path() / "bad.json"), std::invalid_argument);
  std::ofstream(dir.path() / "type.json") << R"({"train": {"batch_size": "many"}})";
  CHECK_THROWS_AS(read_run_config(dir.path() / "type.json"), std::invalid_argument);
  std::ofstream(dir.path() / "ok.json") << R"({"train": {"max_epochs": 3}, "ablation": {"no_decouple": true}})";
  auto ok = read_run_config(dir.path() / "ok.json");
  CHECK(ok.train.max_epochs == 3);
  CHECK(ok.ablation.no_decouple);
}

TEST_CASE("desk preset") {
  auto d = desk_preset();
  CHECK_NOTHROW(d.train.validate());
  CHECK_NOTHROW(d.model.validate());
  CHECK(d.train.learning_rate == 1e-3);
  CHECK(d.train.D == 5.0);
  CHECK(d.train.P == 8);
}

}  // TEST_SUITE
