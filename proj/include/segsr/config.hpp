#pragma once

#include <string>
#include <vector>

#include "segsr/srnet.hpp"

namespace segsr {

struct DatasetConfig {
    std::string root;
    std::string manifest; // path to a split manifest JSON
    int ratio_train = 3;
    int ratio_test = 1;
    uint64_t seed = 42;
};

struct TrainerConfig {
    int total_iters = 80000;
    std::vector<int> milestones = {50000};
    double base_lr = 1e-4;
    double lr_factor = 0.5;
    int batch = 4;
    int patch = 64; // LR patch side
    uint64_t seed = 1234;
    bool augment = true;
    int eval_every = 0;       // 0 -> total_iters / 10
    int checkpoint_every = 0; // 0 -> total_iters / 10
    double grad_clip = 0.0;   // 0 -> off
};

struct MetricsConfig {
    bool y_channel = false;
    bool lpips = true;
    bool clipscore = true;
    std::string lpips_net = "stub"; // stub | file
    std::string lpips_path;
    uint64_t lpips_seed = 5;
    bool class_balanced = false;
};

// Declarative description of one experiment. Parsed from JSON with strict
// schema checking: unknown keys and type violations are all reported at once.
struct ExperimentConfig {
    int scale = 4;
    SrNetConfig srnet;
    EncoderConfig encoder;
    uint64_t slm_seed = 23;
    bool slm_tied_fusion = true;
    uint64_t lmm_seed = 31;
    bool lmm_shared_stem = true;
    AblationVariant variant = AblationVariant::Full;
    DatasetConfig dataset;
    TrainerConfig trainer;
    MetricsConfig metrics;

    static ExperimentConfig defaults();
    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    std::string to_json() const;

    // dotted-path override, e.g. set("trainer.batch", "2")
    void set_key(const std::string& dotted_key, const std::string& value);

    ModelConfig model_config() const;
    void validate() const; // throws with every violation listed

    // human-readable key reference for --help output
    static std::string schema_help();
};

} // namespace segsr
