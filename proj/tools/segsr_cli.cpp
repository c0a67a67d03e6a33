// Command-line front end. Links against the segsr C API only.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segsr.h"

namespace fs = std::filesystem;

namespace {

int fail_status(segsr_status st) {
    std::fprintf(stderr, "error: %s\n", segsr_last_error());
    return static_cast<int>(st);
}

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "experiment config JSON");
    cmd->add_option("--set", args.sets,
                    "override a config key, e.g. --set trainer.batch=2 (repeatable)");
}

// nullptr on failure (status already printed)
segsr_config* build_config(const ConfigArgs& args, segsr_status* out_status) {
    segsr_config* cfg = nullptr;
    segsr_status st = args.config_path.empty() ? segsr_config_default(&cfg)
                                               : segsr_config_load(args.config_path.c_str(), &cfg);
    if (st != SEGSR_OK) {
        *out_status = st;
        return nullptr;
    }
    for (const std::string& kv : args.sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            segsr_config_free(cfg);
            *out_status = SEGSR_ERR_CONFIG;
            return nullptr;
        }
        st = segsr_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
        if (st != SEGSR_OK) {
            segsr_config_free(cfg);
            *out_status = st;
            return nullptr;
        }
    }
    st = segsr_config_validate(cfg);
    if (st != SEGSR_OK) {
        segsr_config_free(cfg);
        *out_status = st;
        return nullptr;
    }
    *out_status = SEGSR_OK;
    return cfg;
}

std::string config_footer() {
    return std::string("Relative encoder/LPIPS weight paths resolve against $SEGSR_WEIGHTS_DIR.\n"
                       "`segsr config` prints the default config JSON.\n\n") +
           segsr_config_keys_help();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SeG-SR: semantic-guided image super-resolution"};
    app.require_subcommand(1);
    const std::string footer = config_footer();

    // ---- split ----
    auto* split = app.add_subcommand("split", "create a class-stratified train/test manifest");
    std::string split_root, split_ratio = "3:1", split_out = "manifest.json";
    uint64_t split_seed = 42;
    split->add_option("--root", split_root, "dataset root (class subdirectories of PNGs)")
        ->required();
    split->add_option("--ratio", split_ratio, "train:test shares (default 3:1)");
    split->add_option("--seed", split_seed, "shuffle seed");
    split->add_option("--out", split_out, "manifest output path");

    // ---- degrade ----
    auto* degrade = app.add_subcommand("degrade", "write a bicubic LR mirror tree");
    std::string deg_root, deg_out;
    int deg_scale = 4;
    degrade->add_option("--root", deg_root, "HR image tree")->required();
    degrade->add_option("--out", deg_out, "LR output tree")->required();
    degrade->add_option("--scale", deg_scale, "downscale factor");

    // ---- train ----
    auto* train = app.add_subcommand("train", "run the optimization loop");
    
    ConfigArgs train_cfg;
    add_config_options(train, train_cfg);
    std::string train_out = "runs/default", train_resume;
    train->add_option("-o,--out", train_out, "output directory (checkpoints, logs)");
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
    
    ConfigArgs eval_cfg;
    add_config_options(eval, eval_cfg);
    std::string eval_ckpt, eval_split = "test", eval_class, eval_out = "eval";
    bool eval_bicubic = false;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate");
    eval->add_option("--split", eval_split, "train or test");
    eval->add_option("--class", eval_class, "restrict to one class");
    eval->add_flag("--baseline-bicubic", eval_bicubic, "evaluate bicubic upsampling instead");
    bool eval_y = false;
    eval->add_flag("--y-channel", eval_y, "PSNR/SSIM on BT.601 luma instead of RGB");
    eval->add_option("-o,--out", eval_out, "report directory");

    // ---- infer ----
    auto* infer = app.add_subcommand("infer", "super-resolve PNGs with a checkpoint");
    std::string infer_ckpt, infer_out;
    std::vector<std::string> infer_inputs;
    infer->add_option("--ckpt", infer_ckpt, "model checkpoint")->required();
    infer->add_option("--input", infer_inputs, "input PNG(s)")->required();
    infer->add_option("-o,--out", infer_out, "output PNG (single input) or directory")->required();

    // ---- export-maps ----
    auto* maps = app.add_subcommand("export-maps", "write per-unit guidance maps for an image");
    std::string maps_ckpt, maps_input, maps_out = "maps";
    maps->add_option("--ckpt", maps_ckpt, "model checkpoint")->required();
    maps->add_option("--input", maps_input, "input PNG")->required();
    maps->add_option("-o,--out", maps_out, "output directory");

    // ---- config ----
    auto* show = app.add_subcommand("config", "print the default config JSON");
    

    for (CLI::App* sub : {split, degrade, train, eval, infer, maps, show}) sub->footer(footer);

    CLI11_PARSE(app, argc, argv);

    if (split->parsed()) {
        if (!fs::is_directory(split_root)) {
            std::fprintf(stderr, "error: dataset root '%s' does not exist\n", split_root.c_str());
            return SEGSR_ERR_CONFIG;
        }
        int rt = 3, rtest = 1;
        if (std::sscanf(split_ratio.c_str(), "%d:%d", &rt, &rtest) != 2) {
            std::fprintf(stderr, "error: --ratio expects train:test, got '%s'\n",
                         split_ratio.c_str());
            return SEGSR_ERR_CONFIG;
        }
        char* summary = nullptr;
        segsr_status st =
            segsr_split(split_root.c_str(), rt, rtest, split_seed, split_out.c_str(), &summary);
        if (st != SEGSR_OK) return fail_status(st);
        std::printf("%s\n", summary);
        segsr_string_free(summary);
        std::printf("manifest written to %s\n", split_out.c_str());
        return 0;
    }

    if (degrade->parsed()) {
        int n = 0;
        segsr_status st = segsr_degrade(deg_root.c_str(), deg_out.c_str(), deg_scale, &n);
        if (st != SEGSR_OK) return fail_status(st);
        std::printf("wrote %d LR images under %s\n", n, deg_out.c_str());
        return 0;
    }

    if (train->parsed()) {
        segsr_status st;
        segsr_config* cfg = build_config(train_cfg, &st);
        if (!cfg) return fail_status(st);
        st = segsr_train(cfg, train_out.c_str(), train_resume.empty() ? nullptr : train_resume.c_str());
        segsr_config_free(cfg);
        if (st != SEGSR_OK) return fail_status(st);
        std::printf("training finished; artifacts under %s\n", train_out.c_str());
        return 0;
    }

    if (eval->parsed()) {
        segsr_status st;
        segsr_config* cfg = build_config(eval_cfg, &st);
        if (!cfg) return fail_status(st);
        if (eval_y) {
            st = segsr_config_set(cfg, "metrics.y_channel", "true");
            if (st != SEGSR_OK) {
                segsr_config_free(cfg);
                return fail_status(st);
            }
        }
        if (eval_ckpt.empty() && !eval_bicubic) {
            std::fprintf(stderr, "error: eval needs --ckpt or --baseline-bicubic\n");
            segsr_config_free(cfg);
            return SEGSR_ERR_CONFIG;
        }
        st = segsr_evaluate(cfg, eval_ckpt.empty() ? nullptr : eval_ckpt.c_str(),
                            eval_split.c_str(), eval_bicubic ? 1 : 0,
                            eval_class.empty() ? nullptr : eval_class.c_str(), eval_out.c_str());
        segsr_config_free(cfg);
        if (st != SEGSR_OK) return fail_status(st);
        std::printf("reports written under %s\n", eval_out.c_str());
        return 0;
    }

    if (infer->parsed()) {
        segsr_model* model = nullptr;
        segsr_status st = segsr_model_load(infer_ckpt.c_str(), &model);
        if (st != SEGSR_OK) return fail_status(st);
        bool out_is_dir = infer_inputs.size() > 1 || fs::is_directory(infer_out);
        if (out_is_dir) fs::create_directories(infer_out);
        for (const std::string& in : infer_inputs) {
            std::string dst = out_is_dir
                                  ? (fs::path(infer_out) / fs::path(in).filename()).string()
                                  : infer_out;
            st = segsr_model_infer(model, in.c_str(), dst.c_str());
            if (st != SEGSR_OK) {
                segsr_model_free(model);
                return fail_status(st);
            }
            std::printf("%s -> %s\n", in.c_str(), dst.c_str());
        }
        segsr_model_free(model);
        return 0;
    }

    if (maps->parsed()) {
        segsr_model* model = nullptr;
        segsr_status st = segsr_model_load(maps_ckpt.c_str(), &model);
        if (st != SEGSR_OK) return fail_status(st);
        int k = 0;
        st = segsr_model_export_maps(model, maps_input.c_str(), maps_out.c_str(), &k);
        segsr_model_free(model);
        if (st != SEGSR_OK) return fail_status(st);
        std::printf("wrote %d guidance maps under %s\n", k, maps_out.c_str());
        return 0;
    }

    if (show->parsed()) {
        segsr_config* cfg = nullptr;
        segsr_status st = segsr_config_default(&cfg);
        if (st != SEGSR_OK) return fail_status(st);
        char* text = nullptr;
        st = segsr_config_dump(cfg, &text);
        segsr_config_free(cfg);
        if (st != SEGSR_OK) return fail_status(st);
        std::printf("%s", text);
        segsr_string_free(text);
        return 0;
    }
    return 0;
}
