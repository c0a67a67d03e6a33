#include "segsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "segsr/bicubic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace segsr {

double lr_at(const Schedule& s, int iteration) {
    check(iteration >= 0 && iteration < s.total_iters,
          "lr_at: iteration " + std::to_string(iteration) + " outside [0, " +
              std::to_string(s.total_iters) + ")");
    int hits = 0;
    for (int m : s.milestones)
        if (m <= iteration) ++hits;
    return s.base_lr * std::pow(s.factor, hits);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(ParamList trainable, double beta1, double beta2, double eps)
    : params_(std::move(trainable)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].tensor.numel(), 0.0);
        v_[i].assign(params_[i].tensor.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].tensor;
        if (!p.has_grad()) continue;
        const std::vector<double>& g = p.grad();
        double* val = p.data();
        for (size_t j = 0; j < g.size(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
            double mh = m_[i][j] / bc1;
            double vh = v_[i][j] / bc2;
            val[j] -= lr * mh / (std::sqrt(vh) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (NamedTensor& p : params_) p.tensor.clear_grad();
}

double Adam::grad_norm() const {
    double acc = 0.0;
    for (const NamedTensor& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) acc += g * g;
    }
    return std::sqrt(acc);
}

void Adam::clip_grad_norm(double max_norm) {
    double n = grad_norm();
    if (n <= max_norm || n == 0.0) return;
    double scale = max_norm / n;
    for (NamedTensor& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (double& v : p.tensor.grad_mut()) v *= scale;
    }
}

void Adam::save_state(Container& c) const {
    for (size_t i = 0; i < params_.size(); ++i) {
        c.put_f64("adam/m/" + params_[i].name, params_[i].tensor.shape(), m_[i]);
        c.put_f64("adam/v/" + params_[i].name, params_[i].tensor.shape(), v_[i]);
    }
}

void Adam::load_state(const Container& c) {
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i] = c.get("adam/m/" + params_[i].name).f64;
        v_[i] = c.get("adam/v/" + params_[i].name).f64;
        check(m_[i].size() == params_[i].tensor.values().size(),
              "checkpoint: optimizer moment size mismatch for " + params_[i].name);
    }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const SegSrModel& model, const ExperimentConfig& cfg,
                     int iteration, double best_psnr, const Adam* adam, const Rng* rng) {
    Container c;
    for (const NamedTensor& p : model.named_parameters())
        c.put_f64("param/" + p.name, p.tensor.shape(), p.tensor.values());
    if (adam) {
        adam->save_state(c);
        json m;
        m["adam_t"] = adam->step_count();
        c.put_string("adam/meta", m.dump());
    }
    if (rng) c.put_string("rng", rng->save_state());
    json meta;
    meta["config"] = json::parse(cfg.to_json());
    meta["iteration"] = iteration;
    meta["best_psnr"] = best_psnr;
    c.put_string("meta", meta.dump());
    c.save(path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    LoadedCheckpoint out;
    out.raw = Container::load(path);
    json meta = json::parse(out.raw.get_string("meta"), nullptr, false);
    check(!meta.is_discarded(), "checkpoint: malformed meta entry");
    out.config = ExperimentConfig::from_json_text(meta.at("config").dump());
    out.iteration = meta.at("iteration").get<int>();
    out.best_psnr = meta.value("best_psnr", 0.0);
    out.model = std::make_unique<SegSrModel>(out.config.model_config());
    for (NamedTensor& p : out.model->named_parameters()) {
        const ContainerEntry& e = out.raw.get("param/" + p.name);
        check(e.shape == p.tensor.shape(), "checkpoint: shape mismatch for " + p.name);
        p.tensor.values() = e.f64;
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

Tensor clamp01(const Tensor& t) {
    std::vector<double> v = t.values();
    for (double& x : v) x = std::min(std::max(x, 0.0), 1.0);
    return Tensor::from_data(t.shape(), std::move(v));
}

} // namespace

MetricReport evaluate_model(const SegSrModel* model, int scale, const DatasetManifest& manifest,
                            const MetricsConfig& mcfg, const EncoderConfig& clip_encoder,
                            const EvalOptions& opts) {
    auto items = manifest.split_list(opts.split);
    check(!items.empty(), "evaluate: split '" + opts.split + "' is empty");
    if (!opts.class_filter.empty()) {
        std::vector<std::pair<std::string, std::string>> kept;
        for (auto& it : items)
            if (it.first == opts.class_filter) kept.push_back(it);
        if (kept.empty()) {
            std::string valid;
            for (const ClassSplit& c : manifest.classes) valid += (valid.empty() ? "" : ", ") + c.name;
            fail("evaluate: class '" + opts.class_filter + "' matches nothing; valid classes: " +
                 valid);
        }
        items = std::move(kept);
    }

    std::unique_ptr<FeatureNet> lpips_net;
    if (mcfg.lpips) {
        if (mcfg.lpips_net == "file")
            lpips_net = std::make_unique<FileFeatureNet>(mcfg.lpips_path);
        else
            lpips_net = std::make_unique<StubFeatureNet>(mcfg.lpips_seed);
    }
    std::unique_ptr<ClipScorer> clip;
    if (mcfg.clipscore) clip = std::make_unique<ClipScorer>(clip_encoder);

    MetricReport report;
    report.class_balanced = mcfg.class_balanced;
    NoGradGuard ng;
    for (const auto& [cname, rel] : items) {
        Tensor hr = image_to_tensor(read_png((fs::path(manifest.root) / rel).string()));
        int h = hr.dim(1) / scale * scale;
        int w = hr.dim(2) / scale * scale;
        check(h >= scale && w >= scale, "evaluate: image '" + rel + "' smaller than the scale");
        if (h != hr.dim(1) || w != hr.dim(2)) hr = crop2d(hr, 0, hr.dim(1) - h, 0, hr.dim(2) - w);
        Tensor lr = bicubic_resize(hr, h / scale, w / scale);
        Tensor pred;
        if (opts.bicubic_baseline || model == nullptr)
            pred = bicubic_resize(lr, h, w);
        else
            pred = model->forward(lr);
        pred = clamp01(pred);

        ImageMetrics im;
        im.path = rel;
        im.class_name = cname;
        if (mcfg.y_channel) {
            im.psnr = psnr(rgb_to_luma(pred), rgb_to_luma(hr));
            im.ssim = ssim(rgb_to_luma(pred), rgb_to_luma(hr));
        } else {
            im.psnr = psnr(pred, hr);
            im.ssim = ssim(pred, hr);
        }
        if (lpips_net) im.lpips = lpips(pred, hr, *lpips_net);
        if (clip) im.clipscore = clip->score(pred, hr);
        report.per_image.push_back(std::move(im));
    }
    report.finalize();
    return report;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

TrainResult train(const ExperimentConfig& cfg, const std::string& out_dir,
                  const std::string& resume_path, const TrainHooks* hooks) {
    cfg.validate();
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    if (!cfg.dataset.manifest.empty())
        manifest = DatasetManifest::load(cfg.dataset.manifest);
    else
        manifest = split_dataset(cfg.dataset.root, cfg.dataset.ratio_train, cfg.dataset.ratio_test,
                                 cfg.dataset.seed);

    auto model = std::make_unique<SegSrModel>(cfg.model_config());
    ParamList trainable;
    for (const NamedTensor& p : model->named_parameters())
        if (p.trainable) trainable.push_back(p);
    Adam adam(trainable);
    Rng rng(cfg.trainer.seed);

    int start_iter = 0;
    double best_psnr = -1.0;
    if (!resume_path.empty()) {
        LoadedCheckpoint ck = load_checkpoint(resume_path);
        check(ck.config.to_json() == cfg.to_json(),
              "train: resumed checkpoint was written with a different config");
        for (NamedTensor& p : model->named_parameters())
            p.tensor.values() = ck.raw.get("param/" + p.name).f64;
        adam.load_state(ck.raw);
        json am = json::parse(ck.raw.get_string("adam/meta"));
        adam.set_step_count(am.at("adam_t").get<int64_t>());
        rng.load_state(ck.raw.get_string("rng"));
        start_iter = ck.iteration;
        best_psnr = ck.best_psnr;
    }

    Schedule sched{cfg.trainer.base_lr, cfg.trainer.milestones, cfg.trainer.lr_factor,
                   cfg.trainer.total_iters};
    const int total = cfg.trainer.total_iters;
    const int eval_every =
        cfg.trainer.eval_every > 0 ? cfg.trainer.eval_every : std::max(total / 10, 1);
    const int ckpt_every =
        cfg.trainer.checkpoint_every > 0 ? cfg.trainer.checkpoint_every : std::max(total / 10, 1);

    PatchSampler sampler(manifest, cfg.scale);
    std::ofstream log(fs::path(out_dir) / "train_log.jsonl",
                      start_iter > 0 ? std::ios::app : std::ios::trunc);
    check(log.good(), "train: cannot write log under '" + out_dir + "'");

    const bool has_test = manifest.test_count() > 0;
    std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
    TrainResult result;

    for (int iter = start_iter; iter < total; ++iter) {
        double lr = lr_at(sched, iter);
        std::vector<PairedSample> batch = sampler.sample_batch(cfg.trainer.patch, cfg.trainer.batch, rng);
        if (cfg.trainer.augment)
            for (PairedSample& p : batch) p = augment(p, rng);

        adam.zero_grad();
        double loss_acc = 0.0;
        for (const PairedSample& p : batch) {
            Tensor out = model->forward(p.lr);
            Tensor loss = l1_loss(out, p.hr);
            loss.backward(1.0 / cfg.trainer.batch);
            loss_acc += loss.item();
        }
        double loss_val = loss_acc / cfg.trainer.batch;
        if (iter == start_iter) result.first_loss = loss_val;
        result.final_loss = loss_val;

        if (!std::isfinite(loss_val)) {
            std::string diag = (fs::path(out_dir) / "diagnostic.ckpt").string();
            save_checkpoint(diag, *model, cfg, iter, best_psnr, &adam, &rng);
            log << "{\"iter\":" << iter << ",\"event\":\"nan_abort\"}\n";
            log.flush();
            throw NanAbort("train: non-finite loss at iteration " + std::to_string(iter) +
                           "; diagnostic checkpoint written to " + diag);
        }
        if (hooks && hooks->after_backward) hooks->after_backward(iter, adam.params());
        if (cfg.trainer.grad_clip > 0.0) adam.clip_grad_norm(cfg.trainer.grad_clip);
        adam.step(lr);

        log << "{\"iter\":" << iter << ",\"loss\":" << fmt_double(loss_val)
            << ",\"lr\":" << fmt_double(lr) << "}\n";

        const bool last_iter = iter + 1 == total;
        if (has_test && ((iter + 1) % eval_every == 0 || last_iter)) {
            EvalOptions eo;
            MetricReport rep = evaluate_model(model.get(), cfg.scale, manifest, cfg.metrics,
                                              cfg.encoder, eo);
            log << "{\"iter\":" << iter << ",\"eval_psnr\":" << fmt_double(rep.overall.psnr)
                << ",\"eval_ssim\":" << fmt_double(rep.overall.ssim) << "}\n";
            if (rep.overall.psnr > best_psnr) {
                best_psnr = rep.overall.psnr;
                save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), *model, cfg, iter + 1,
                                best_psnr, nullptr, nullptr);
            }
        }
        if ((iter + 1) % ckpt_every == 0 || last_iter)
            save_checkpoint(last_path, *model, cfg, iter + 1, best_psnr, &adam, &rng);
    }
    log.flush();

    json meta;
    meta["trainable_params"] = model->trainable_param_count();
    meta["total_params"] = model->total_param_count();
    meta["iterations"] = total;
    meta["best_psnr"] = best_psnr;
    meta["final_loss"] = result.final_loss;
    meta["variant"] = to_string(cfg.variant);
    std::ofstream mf(fs::path(out_dir) / "meta.json");
    mf << meta.dump(2) << "\n";

    result.best_psnr = best_psnr;
    result.iterations = total;
    result.checkpoint_path = last_path;
    return result;
}

} // namespace segsr
