#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "wavesep/config.hpp"

using namespace wavesep;
using nlohmann::json;

TEST_CASE("defaults survive a json round trip") {
    const RunConfig d;
    const auto j = to_json(d);
    CHECK(to_json(run_config_from_json(j)) == j);
    CHECK(to_json(run_config_from_json(json::object())) == j);
}

TEST_CASE("partial sections override only their keys") {
    const auto c = run_config_from_json(json::parse(R"({"model": {"depth": 3}, "train": {"lr": 0.5}})"));
    CHECK(c.model.depth == 3);
    CHECK(c.model.base_filters == ModelConfig{}.base_filters);
    CHECK(c.train.lr == 0.5);
    CHECK(c.train.batch_size == TrainConfig{}.batch_size);
}

TEST_CASE("unknown keys and sections are rejected") {
    try {
        run_config_from_json(json::parse(R"({"model": {"depht": 3}})"));
        FAIL("expected ConfigError");
    } catch (const ConfigError &e) {
        CHECK(std::string(e.what()).find("model.depht") != std::string::npos);
    }
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"optimizer": {}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": 3})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse("[1, 2]")), ConfigError);
}

TEST_CASE("wrongly typed values are rejected") {
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"depth": "four"}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"data": {"vocabulary": "bass"}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"conditioning_enabled": 1.5}})")), ConfigError);
}

TEST_CASE("semantic validation") {
    ModelConfig m;
    m.kernel_down = 4;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = {};
    m.num_sources = 1;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = {};
    m.output_activation = "relu";
    CHECK_THROWS_AS(m.validate(), ConfigError);

    TrainConfig t;
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = {};
    t.lr_decay_gamma = 1.5;
    CHECK_THROWS_AS(t.validate(), ConfigError);

    DataConfig d;
    d.vocabulary = {"bass", "bass"};
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d = {};
    d.ensemble_sizes = {5};
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d = {};
    d.test_fraction = 1.0;
    CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("config files load and fail with a useful message") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto good = dir / "wavesep_cfg_good.json", bad = dir / "wavesep_cfg_bad.json";
    std::ofstream(good) << R"({"data": {"n_pieces": 12}})";
    std::ofstream(bad) << "{ not json";
    CHECK(load_run_config(good.string()).data.n_pieces == 12);
    CHECK_THROWS_AS(load_run_config(bad.string()), ConfigError);
    CHECK_THROWS_AS(load_run_config((dir / "wavesep_missing.json").string()), ConfigError);
    std::filesystem::remove(good);
    std::filesystem::remove(bad);
}

TEST_CASE("reference lists every key") {
    const auto ref = config_reference();
    const auto j = to_json(RunConfig{});
    for (const auto &[section, body] : j.items())
        for (const auto &[key, _] : body.items()) {
            INFO(section << "." << key);
            CHECK(ref.find(section + "." + key) != std::string::npos);
        }
}
