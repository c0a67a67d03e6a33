#include "segsr.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "segsr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

struct segsr_config {
    segsr::ExperimentConfig cfg;
};

struct segsr_model {
    segsr::ExperimentConfig cfg;
    std::unique_ptr<segsr::SegSrModel> model;
};

namespace {

thread_local std::string g_last_error;

segsr_status set_error(const std::string& msg, segsr_status code) {
    g_last_error = msg;
    return code;
}

template <typename Fn>
segsr_status guarded(Fn&& fn) {
    try {
        fn();
        return SEGSR_OK;
    } catch (const segsr::NanAbort& e) {
        return set_error(e.what(), SEGSR_ERR_NAN);
    } catch (const segsr::Error& e) {
        // config violations carry their own prefix
        bool cfg_err = std::strncmp(e.what(), "config:", 7) == 0;
        return set_error(e.what(), cfg_err ? SEGSR_ERR_CONFIG : SEGSR_ERR_RUNTIME);
    } catch (const std::exception& e) {
        return set_error(e.what(), SEGSR_ERR_RUNTIME);
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

// relative encoder weight paths resolve against SEGSR_WEIGHTS_DIR
void resolve_weight_paths(segsr::ExperimentConfig& cfg) {
    const char* dir = std::getenv("SEGSR_WEIGHTS_DIR");
    if (!dir || !*dir) return;
    auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative() && !fs::exists(p)) {
            fs::path candidate = fs::path(dir) / p;
            if (fs::exists(candidate)) p = candidate.string();
        }
    };
    resolve(cfg.encoder.weights_path);
    resolve(cfg.metrics.lpips_path);
}

} // namespace

extern "C" {

const char* segsr_last_error(void) { return g_last_error.c_str(); }

const char* segsr_version(void) { return "segsr 0.1.0"; }

const char* segsr_config_keys_help(void) {
    static const std::string help = segsr::ExperimentConfig::schema_help();
    return help.c_str();
}

segsr_status segsr_config_default(segsr_config** out) {
    return guarded([&] { *out = new segsr_config{segsr::ExperimentConfig::defaults()}; });
}

segsr_status segsr_config_load(const char* path, segsr_config** out) {
    return guarded([&] {
        auto cfg = segsr::ExperimentConfig::load(path);
        resolve_weight_paths(cfg);
        *out = new segsr_config{std::move(cfg)};
    });
}

segsr_status segsr_config_set(segsr_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        segsr::check(cfg != nullptr, "config handle is null");
        cfg->cfg.set_key(key, value);
        resolve_weight_paths(cfg->cfg);
    });
}

segsr_status segsr_config_validate(const segsr_config* cfg) {
    return guarded([&] {
        segsr::check(cfg != nullptr, "config handle is null");
        cfg->cfg.validate();
    });
}

segsr_status segsr_config_dump(const segsr_config* cfg, char** json_out) {
    return guarded([&] {
        segsr::check(cfg != nullptr, "config handle is null");
        *json_out = dup_string(cfg->cfg.to_json());
    });
}

void segsr_config_free(segsr_config* cfg) { delete cfg; }

segsr_status segsr_split(const char* root, int ratio_train, int ratio_test, uint64_t seed,
                         const char* out_manifest, char** summary_json) {
    return guarded([&] {
        segsr::DatasetManifest m = segsr::split_dataset(root, ratio_train, ratio_test, seed);
        m.save(out_manifest);
        if (summary_json) {
            json s;
            for (const segsr::ClassSplit& c : m.classes)
                s[c.name] = {{"train", c.train.size()}, {"test", c.test.size()}};
            json top;
            top["classes"] = s;
            top["train_total"] = m.train_count();
            top["test_total"] = m.test_count();
            *summary_json = dup_string(top.dump(2));
        }
    });
}

segsr_status segsr_degrade(const char* root, const char* out_root, int scale, int* images_written) {
    return guarded([&] {
        int n = segsr::degrade_tree(root, out_root, scale);
        if (images_written) *images_written = n;
    });
}

segsr_status segsr_train(const segsr_config* cfg, const char* out_dir, const char* resume_ckpt) {
    return guarded([&] {
        segsr::check(cfg != nullptr, "config handle is null");
        segsr::train(cfg->cfg, out_dir, resume_ckpt ? resume_ckpt : "");
    });
}

segsr_status segsr_evaluate(const segsr_config* cfg, const char* ckpt, const char* split,
                            int baseline_bicubic, const char* class_filter, const char* out_dir) {
    return guarded([&] {
        segsr::check(cfg != nullptr, "config handle is null");
        const segsr::ExperimentConfig& c = cfg->cfg;
        c.validate();
        segsr::DatasetManifest manifest;
        if (!c.dataset.manifest.empty())
            manifest = segsr::DatasetManifest::load(c.dataset.manifest);
        else
            manifest = segsr::split_dataset(c.dataset.root, c.dataset.ratio_train,
                                            c.dataset.ratio_test, c.dataset.seed);
        segsr::EvalOptions opts;
        opts.split = split ? split : "test";
        opts.bicubic_baseline = baseline_bicubic != 0;
        if (class_filter) opts.class_filter = class_filter;

        std::unique_ptr<segsr::SegSrModel> model;
        segsr::EncoderConfig clip_cfg = c.encoder;
        int scale = c.scale;
        if (!opts.bicubic_baseline) {
            segsr::check(ckpt != nullptr, "evaluate: checkpoint path required");
            segsr::LoadedCheckpoint lc = segsr::load_checkpoint(ckpt);
            model = std::move(lc.model);
            clip_cfg = lc.config.encoder;
            scale = lc.config.scale;
        }
        segsr::MetricReport rep =
            segsr::evaluate_model(model.get(), scale, manifest, c.metrics, clip_cfg, opts);
        fs::create_directories(out_dir);
        std::ofstream csv(fs::path(out_dir) / "per_image.csv");
        csv << rep.to_csv();
        std::ofstream js(fs::path(out_dir) / "report.json");
        js << rep.to_json();
        segsr::check(csv.good() && js.good(), "evaluate: cannot write reports to " +
                                                  std::string(out_dir));
    });
}

segsr_status segsr_model_load(const char* ckpt, segsr_model** out) {
    return guarded([&] {
        segsr::LoadedCheckpoint lc = segsr::load_checkpoint(ckpt);
        *out = new segsr_model{std::move(lc.config), std::move(lc.model)};
    });
}

segsr_status segsr_model_infer(const segsr_model* model, const char* input_png,
                               const char* output_png) {
    return guarded([&] {
        segsr::check(model != nullptr, "model handle is null");
        segsr::Tensor lr = segsr::image_to_tensor(segsr::read_png(input_png));
        segsr::NoGradGuard ng;
        segsr::Tensor out = model->model->forward(lr);
        segsr::write_png(output_png, segsr::tensor_to_image(out));
    });
}

segsr_status segsr_model_export_maps(const segsr_model* model, const char* input_png,
                                     const char* out_dir, int* map_count) {
    return guarded([&] {
        segsr::check(model != nullptr, "model handle is null");
        segsr::check(model->cfg.variant == segsr::AblationVariant::Full,
                     "export-maps: the checkpoint's variant has no guidance maps");
        segsr::Tensor lr = segsr::image_to_tensor(segsr::read_png(input_png));
        segsr::NoGradGuard ng;
        segsr::ForwardTrace trace;
        model->model->forward(lr, &trace);

        fs::create_directories(out_dir);
        json sidecar;
        sidecar["source"] = input_png;
        sidecar["grid"] = {trace.maps.src_hc, trace.maps.src_wc};
        json maps = json::array();
        for (size_t i = 0; i < trace.maps.maps.size(); ++i) {
            const segsr::Tensor& m = trace.maps.maps[i];
            double lo = m.data()[0], hi = m.data()[0];
            for (int64_t j = 0; j < m.numel(); ++j) {
                lo = std::min(lo, m.data()[j]);
                hi = std::max(hi, m.data()[j]);
            }
            char name[32];
            std::snprintf(name, sizeof(name), "map_%02zu.png", i + 1);
            // affine [-1,1] -> [0,255] on a gray RGB image
            segsr::ImageU8 img;
            img.width = m.dim(2);
            img.height = m.dim(1);
            img.rgb.resize(static_cast<size_t>(3) * m.numel());
            for (int64_t j = 0; j < m.numel(); ++j) {
                double v = (m.data()[j] + 1.0) * 0.5;
                v = std::min(std::max(v, 0.0), 1.0);
                uint8_t byte = static_cast<uint8_t>(std::lround(v * 255.0));
                img.rgb[3 * j] = img.rgb[3 * j + 1] = img.rgb[3 * j + 2] = byte;
            }
            segsr::write_png((fs::path(out_dir) / name).string(), img);
            maps.push_back({{"file", name}, {"min", lo}, {"max", hi}});
        }
        sidecar["maps"] = maps;
        std::ofstream js(fs::path(out_dir) / "maps.json");
        js << sidecar.dump(2) << "\n";
        if (map_count) *map_count = static_cast<int>(trace.maps.maps.size());
    });
}

segsr_status segsr_model_scale(const segsr_model* model, int* scale) {
    return guarded([&] {
        segsr::check(model != nullptr && scale != nullptr, "bad arguments");
        *scale = model->cfg.scale;
    });
}

void segsr_model_free(segsr_model* model) { delete model; }

void segsr_string_free(char* s) { std::free(s); }

} // extern "C"
