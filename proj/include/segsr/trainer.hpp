#pragma once

#include <functional>
#include <memory>

#include "segsr/config.hpp"
#include "segsr/data.hpp"
#include "segsr/metrics.hpp"

namespace segsr {

// Raised when training aborts on a non-finite loss (exit code 2 at the CLI).
class NanAbort : public Error {
public:
    using Error::Error;
};

struct Schedule {
    double base_lr = 1e-4;
    std::vector<int> milestones;
    double factor = 0.5;
    int total_iters = 0;
};

// base_lr * factor^(number of milestones <= iteration)
double lr_at(const Schedule& s, int iteration);

class Adam {
public:
    explicit Adam(ParamList trainable, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(double lr);
    void zero_grad();
    double grad_norm() const;
    void clip_grad_norm(double max_norm);

    const ParamList& params() const { return params_; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }

    void save_state(Container& c) const;
    void load_state(const Container& c);

private:
    ParamList params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const SegSrModel& model, const ExperimentConfig& cfg,
                     int iteration, double best_psnr, const Adam* adam, const Rng* rng);

struct LoadedCheckpoint {
    ExperimentConfig config;
    int iteration = 0;
    double best_psnr = 0.0;
    std::unique_ptr<SegSrModel> model;
    Container raw; // optimizer moments and rng state, when present
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string split = "test";
    bool bicubic_baseline = false; // evaluate plain bicubic upsampling instead of the model
    std::string class_filter;      // empty = all classes
};

// Full-image protocol: HR cropped to a scale multiple, LR by bicubic
// downscale, prediction clamped to [0,1] before the metrics.
MetricReport evaluate_model(const SegSrModel* model, int scale, const DatasetManifest& manifest,
                            const MetricsConfig& mcfg, const EncoderConfig& clip_encoder,
                            const EvalOptions& opts);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainHooks {
    // called after the backward pass of every iteration, before the update
    std::function<void(int iter, const ParamList& trainable)> after_backward;
};

struct TrainResult {
    double first_loss = 0.0;
    double final_loss = 0.0;
    double best_psnr = 0.0;
    int iterations = 0;
    std::string checkpoint_path; // last checkpoint written
};

// Runs the full optimization loop; writes train_log.jsonl, last/best
// checkpoints and meta.json under out_dir. Throws NanAbort on a non-finite
// loss (after writing a diagnostic checkpoint).
TrainResult train(const ExperimentConfig& cfg, const std::string& out_dir,
                  const std::string& resume_path = "", const TrainHooks* hooks = nullptr);

} // namespace segsr
