#include <doctest.h>

#include "helpers.hpp"
#include "segsr/config.hpp"

using namespace segsr;

TEST_CASE("defaults mirror the reference settings and validate") {
    ExperimentConfig c = ExperimentConfig::defaults();
    CHECK(c.scale == 4);
    CHECK(c.srnet.k == 6);
    CHECK(c.encoder.lora_rank == 32);
    CHECK(c.trainer.base_lr == 1e-4);
    CHECK(c.trainer.batch == 4);
    CHECK(c.trainer.patch == 64);
    CHECK(c.trainer.total_iters == 80000);
    CHECK(c.trainer.milestones == std::vector<int>{50000});
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("round trip through json") {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.scale = 2;
    c.srnet.k = 3;
    c.srnet.blocks_total = 3;
    ExperimentConfig back = ExperimentConfig::from_json_text(c.to_json());
    CHECK(back.to_json() == c.to_json());
}

TEST_CASE("unknown keys are all reported at once") {
    std::string text = R"({"scale": 2, "bogus": 1, "trainer": {"nope": 2, "batch": 1}})";
    try {
        ExperimentConfig::from_json_text(text);
        FAIL("expected a config error");
    } catch (const Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("bogus") != std::string::npos);
        CHECK(msg.find("trainer.nope") != std::string::npos);
    }
}

TEST_CASE("type violations are reported") {
    std::string text = R"({"trainer": {"batch": "four"}})";
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json_text(text),
                         doctest::Contains("trainer.batch"), Error);
}

TEST_CASE("semantic validation lists every violation") {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.scale = 3;
    c.trainer.batch = 0;
    c.trainer.milestones = {100, 50};
    try {
        c.validate();
        FAIL("expected a config error");
    } catch (const Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("scale") != std::string::npos);
        CHECK(msg.find("trainer.batch") != std::string::npos);
        CHECK(msg.find("milestones") != std::string::npos);
    }
}

TEST_CASE("lora rank must stay below the encoder width") {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.encoder.width = 16;
    c.encoder.heads = 2;
    c.encoder.lora_rank = 16;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("lora.rank"), Error);
    c.encoder.targets = LoraTargets::None;
    CHECK_NOTHROW(c.validate()); // rank is ignored without adapters
}

TEST_CASE("set_key overrides with json-typed values") {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.set_key("trainer.batch", "2");
    CHECK(c.trainer.batch == 2);
    c.set_key("srnet.style", "residual");
    CHECK(c.srnet.style == UnitStyle::Residual);
    c.set_key("trainer.milestones", "[10, 20]");
    CHECK(c.trainer.milestones == std::vector<int>{10, 20});
    c.set_key("ablation.variant", "baseline");
    CHECK(c.variant == AblationVariant::Baseline);
    CHECK_THROWS_AS(c.set_key("no.such.key", "1"), Error);
    CHECK_THROWS_AS(c.set_key("trainer.batch", "\"two\""), Error);

    // semantic checks are deferred so override order does not matter
    c.set_key("encoder.width", "16");
    c.set_key("encoder.lora.rank", "2");
    CHECK_NOTHROW(c.validate());
    c.set_key("scale", "3");
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("enum violations carry the offending key") {
    std::string text = R"({"srnet": {"style": "fancy"}, "ablation": {"variant": "mystery"}})";
    try {
        ExperimentConfig::from_json_text(text);
        FAIL("expected a config error");
    } catch (const Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("srnet.style") != std::string::npos);
        CHECK(msg.find("ablation.variant") != std::string::npos);
    }
}

TEST_CASE("schema help documents the keys") {
    std::string help = ExperimentConfig::schema_help();
    for (const char* key : {"scale", "srnet.k", "encoder.lora.rank", "trainer.milestones",
                            "metrics.y_channel", "ablation.variant", "dataset.ratio"})
        CHECK(help.find(key) != std::string::npos);
}

TEST_CASE("model_config carries the scale into the srnet") {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.scale = 2;
    ModelConfig m = c.model_config();
    CHECK(m.srnet.scale == 2);
    CHECK(m.variant == AblationVariant::Full);
}
