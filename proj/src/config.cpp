#include "segsr/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace segsr {

namespace {

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["scale"] = c.scale;
    j["srnet"] = {{"style", to_string(c.srnet.style)},
                  {"k", c.srnet.k},
                  {"blocks_total", c.srnet.blocks_total},
                  {"blocks_per_group", c.srnet.blocks_per_group},
                  {"feat_channels", c.srnet.feat_channels},
                  {"window", c.srnet.window},
                  {"attn_heads", c.srnet.attn_heads},
                  {"shift_windows", c.srnet.shift_windows},
                  {"mlp_ratio", c.srnet.mlp_ratio},
                  {"ca_reduction", c.srnet.ca_reduction},
                  {"seed", c.srnet.seed}};
    j["encoder"] = {{"source", c.encoder.source},
                    {"weights_path", c.encoder.weights_path},
                    {"patch_size", c.encoder.patch_size},
                    {"depth", c.encoder.depth},
                    {"width", c.encoder.width},
                    {"heads", c.encoder.heads},
                    {"mlp_ratio", c.encoder.mlp_ratio},
                    {"pretrain_grid", c.encoder.pretrain_grid},
                    {"stub_seed", c.encoder.stub_seed},
                    {"lora", {{"rank", c.encoder.lora_rank},
                              {"targets", to_string(c.encoder.targets)},
                              {"seed", c.encoder.adapter_seed}}}};
    j["slm"] = {{"tied_fusion", c.slm_tied_fusion}, {"seed", c.slm_seed}};
    j["lmm"] = {{"shared_stem", c.lmm_shared_stem}, {"seed", c.lmm_seed}};
    j["ablation"] = {{"variant", to_string(c.variant)}};
    j["dataset"] = {{"root", c.dataset.root},
                    {"manifest", c.dataset.manifest},
                    {"ratio", {c.dataset.ratio_train, c.dataset.ratio_test}},
                    {"seed", c.dataset.seed}};
    j["trainer"] = {{"total_iters", c.trainer.total_iters},
                    {"milestones", c.trainer.milestones},
                    {"base_lr", c.trainer.base_lr},
                    {"lr_factor", c.trainer.lr_factor},
                    {"batch", c.trainer.batch},
                    {"patch", c.trainer.patch},
                    {"seed", c.trainer.seed},
                    {"augment", c.trainer.augment},
                    {"eval_every", c.trainer.eval_every},
                    {"checkpoint_every", c.trainer.checkpoint_every},
                    {"grad_clip", c.trainer.grad_clip}};
    j["metrics"] = {{"y_channel", c.metrics.y_channel},
                    {"lpips", c.metrics.lpips},
                    {"clipscore", c.metrics.clipscore},
                    {"lpips_net", c.metrics.lpips_net},
                    {"lpips_path", c.metrics.lpips_path},
                    {"lpips_seed", c.metrics.lpips_seed},
                    {"class_balanced", c.metrics.class_balanced}};
    return j;
}

bool type_compatible(const json& expected, const json& given) {
    if (expected.is_number() && given.is_number()) {
        // integers fit float slots; floats do not fit integer slots
        if (expected.is_number_float()) return true;
        return given.is_number_integer() || given.is_number_unsigned();
    }
    if (expected.is_array() && given.is_array()) return true;
    if (expected.is_object() && given.is_object()) return true;
    return expected.type() == given.type();
}

void merge_validate(json& base, const json& given, const std::string& path,
                    std::vector<std::string>& errors) {
    for (auto it = given.begin(); it != given.end(); ++it) {
        std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) {
            errors.push_back("unknown key: " + key_path);
            continue;
        }
        json& slot = base[it.key()];
        if (!type_compatible(slot, it.value())) {
            errors.push_back("wrong type for " + key_path + ": expected " +
                             std::string(slot.type_name()) + ", got " +
                             std::string(it.value().type_name()));
            continue;
        }
        if (slot.is_object())
            merge_validate(slot, it.value(), key_path, errors);
        else
            slot = it.value();
    }
}

void config_from_json(ExperimentConfig& c, const json& j, std::vector<std::string>& errors) {
    auto enum_guard = [&errors](const std::string& key, auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            errors.push_back(key + ": " + e.what());
        }
    };
    c.scale = j["scale"].get<int>();
    const json& s = j["srnet"];
    enum_guard("srnet.style", [&] { c.srnet.style = unit_style_from_string(s["style"].get<std::string>()); });
    c.srnet.k = s["k"].get<int>();
    c.srnet.blocks_total = s["blocks_total"].get<int>();
    c.srnet.blocks_per_group = s["blocks_per_group"].get<int>();
    c.srnet.feat_channels = s["feat_channels"].get<int>();
    c.srnet.window = s["window"].get<int>();
    c.srnet.attn_heads = s["attn_heads"].get<int>();
    c.srnet.shift_windows = s["shift_windows"].get<bool>();
    c.srnet.mlp_ratio = s["mlp_ratio"].get<int>();
    c.srnet.ca_reduction = s["ca_reduction"].get<int>();
    c.srnet.seed = s["seed"].get<uint64_t>();
    c.srnet.scale = c.scale;

    const json& e = j["encoder"];
    c.encoder.source = e["source"].get<std::string>();
    c.encoder.weights_path = e["weights_path"].get<std::string>();
    c.encoder.patch_size = e["patch_size"].get<int>();
    c.encoder.depth = e["depth"].get<int>();
    c.encoder.width = e["width"].get<int>();
    c.encoder.heads = e["heads"].get<int>();
    c.encoder.mlp_ratio = e["mlp_ratio"].get<int>();
    c.encoder.pretrain_grid = e["pretrain_grid"].get<int>();
    c.encoder.stub_seed = e["stub_seed"].get<uint64_t>();
    c.encoder.lora_rank = e["lora"]["rank"].get<int>();
    enum_guard("encoder.lora.targets", [&] {
        c.encoder.targets = lora_targets_from_string(e["lora"]["targets"].get<std::string>());
    });
    c.encoder.adapter_seed = e["lora"]["seed"].get<uint64_t>();

    c.slm_tied_fusion = j["slm"]["tied_fusion"].get<bool>();
    c.slm_seed = j["slm"]["seed"].get<uint64_t>();
    c.lmm_shared_stem = j["lmm"]["shared_stem"].get<bool>();
    c.lmm_seed = j["lmm"]["seed"].get<uint64_t>();
    enum_guard("ablation.variant", [&] {
        c.variant = variant_from_string(j["ablation"]["variant"].get<std::string>());
    });

    const json& d = j["dataset"];
    c.dataset.root = d["root"].get<std::string>();
    c.dataset.manifest = d["manifest"].get<std::string>();
    if (d["ratio"].size() != 2)
        errors.push_back("dataset.ratio: expected [train, test]");
    else {
        c.dataset.ratio_train = d["ratio"][0].get<int>();
        c.dataset.ratio_test = d["ratio"][1].get<int>();
    }
    c.dataset.seed = d["seed"].get<uint64_t>();

    const json& t = j["trainer"];
    c.trainer.total_iters = t["total_iters"].get<int>();
    c.trainer.milestones = t["milestones"].get<std::vector<int>>();
    c.trainer.base_lr = t["base_lr"].get<double>();
    c.trainer.lr_factor = t["lr_factor"].get<double>();
    c.trainer.batch = t["batch"].get<int>();
    c.trainer.patch = t["patch"].get<int>();
    c.trainer.seed = t["seed"].get<uint64_t>();
    c.trainer.augment = t["augment"].get<bool>();
    c.trainer.eval_every = t["eval_every"].get<int>();
    c.trainer.checkpoint_every = t["checkpoint_every"].get<int>();
    c.trainer.grad_clip = t["grad_clip"].get<double>();

    const json& m = j["metrics"];
    c.metrics.y_channel = m["y_channel"].get<bool>();
    c.metrics.lpips = m["lpips"].get<bool>();
    c.metrics.clipscore = m["clipscore"].get<bool>();
    c.metrics.lpips_net = m["lpips_net"].get<std::string>();
    c.metrics.lpips_path = m["lpips_path"].get<std::string>();
    c.metrics.lpips_seed = m["lpips_seed"].get<uint64_t>();
    c.metrics.class_balanced = m["class_balanced"].get<bool>();
}

[[noreturn]] void raise_errors(const std::vector<std::string>& errors) {
    std::string msg = "config: " + std::to_string(errors.size()) + " violation(s):";
    for (const std::string& e : errors) msg += "\n  - " + e;
    fail(msg);
}

} // namespace

ExperimentConfig ExperimentConfig::defaults() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json given = json::parse(text, nullptr, /*allow_exceptions=*/false);
    check(!given.is_discarded(), "config: invalid JSON");
    check(given.is_object(), "config: top level must be an object");

    ExperimentConfig c;
    json base = config_to_json(c);
    std::vector<std::string> errors;
    merge_validate(base, given, "", errors);
    if (!errors.empty()) raise_errors(errors);
    config_from_json(c, base, errors);
    if (!errors.empty()) raise_errors(errors);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "config: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string ExperimentConfig::to_json() const { return config_to_json(*this).dump(2) + "\n"; }

void ExperimentConfig::set_key(const std::string& dotted_key, const std::string& value) {
    json j = config_to_json(*this);
    json* slot = &j;
    std::string rest = dotted_key;
    std::vector<std::string> parts;
    size_t pos;
    while ((pos = rest.find('.')) != std::string::npos) {
        parts.push_back(rest.substr(0, pos));
        rest = rest.substr(pos + 1);
    }
    parts.push_back(rest);
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        check(slot->contains(parts[i]) && (*slot)[parts[i]].is_object(),
              "config: unknown key: " + dotted_key);
        slot = &(*slot)[parts[i]];
    }
    check(slot->contains(parts.back()), "config: unknown key: " + dotted_key);
    json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) parsed = value; // bare strings pass through
    std::vector<std::string> errors;
    if (!type_compatible((*slot)[parts.back()], parsed))
        errors.push_back("wrong type for " + dotted_key);
    if (!errors.empty()) raise_errors(errors);
    (*slot)[parts.back()] = parsed;

    ExperimentConfig c;
    json base = config_to_json(c);
    merge_validate(base, j, "", errors);
    if (!errors.empty()) raise_errors(errors);
    config_from_json(c, base, errors);
    if (!errors.empty()) raise_errors(errors);
    // semantic validation is deferred so override sequences may pass through
    // transient states; consumers validate() before running
    *this = c;
}

ModelConfig ExperimentConfig::model_config() const {
    ModelConfig m;
    m.srnet = srnet;
    m.srnet.scale = scale;
    m.encoder = encoder;
    m.slm_seed = slm_seed;
    m.slm_tied_fusion = slm_tied_fusion;
    m.lmm_seed = lmm_seed;
    m.lmm_shared_stem = lmm_shared_stem;
    m.variant = variant;
    return m;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> errors;
    auto req = [&errors](bool cond, const std::string& msg) {
        if (!cond) errors.push_back(msg);
    };
    req(scale == 2 || scale == 4, "scale: must be 2 or 4");
    req(srnet.k >= 1, "srnet.k: must be >= 1");
    req(srnet.blocks_total >= srnet.k, "srnet.blocks_total: must be >= srnet.k");
    req(srnet.k < 1 || srnet.blocks_total % std::max(srnet.k, 1) == 0,
        "srnet.blocks_total: must be divisible by srnet.k");
    req(srnet.feat_channels >= 1, "srnet.feat_channels: must be >= 1");
    req(srnet.style != UnitStyle::HybridAttention ||
            srnet.feat_channels % std::max(srnet.attn_heads, 1) == 0,
        "srnet.attn_heads: must divide srnet.feat_channels");
    req(srnet.window >= 1, "srnet.window: must be >= 1");
    req(srnet.blocks_per_group >= 1, "srnet.blocks_per_group: must be >= 1");
    req(encoder.patch_size >= 1, "encoder.patch_size: must be >= 1");
    req(encoder.depth >= 1, "encoder.depth: must be >= 1");
    req(encoder.width >= 2, "encoder.width: must be >= 2");
    req(encoder.width % std::max(encoder.heads, 1) == 0, "encoder.heads: must divide encoder.width");
    req(encoder.pretrain_grid >= 1, "encoder.pretrain_grid: must be >= 1");
    req(encoder.source == "stub" || encoder.source == "file",
        "encoder.source: must be stub or file");
    req(encoder.source != "file" || !encoder.weights_path.empty(),
        "encoder.weights_path: required when encoder.source is file");
    if (encoder.targets != LoraTargets::None) {
        req(encoder.lora_rank >= 1, "encoder.lora.rank: must be >= 1");
        req(encoder.lora_rank < encoder.width,
            "encoder.lora.rank: must be < encoder.width (" + std::to_string(encoder.width) + ")");
    }
    req(dataset.ratio_train >= 1, "dataset.ratio: train share must be >= 1");
    req(dataset.ratio_test >= 0, "dataset.ratio: test share must be >= 0");
    req(trainer.total_iters >= 1, "trainer.total_iters: must be >= 1");
    req(trainer.base_lr > 0.0, "trainer.base_lr: must be > 0");
    req(trainer.lr_factor > 0.0, "trainer.lr_factor: must be > 0");
    req(trainer.batch >= 1, "trainer.batch: must be >= 1");
    req(trainer.patch >= 1, "trainer.patch: must be >= 1");
    req(trainer.grad_clip >= 0.0, "trainer.grad_clip: must be >= 0");
    int prev = -1;
    for (int ms : trainer.milestones) {
        if (ms <= prev) {
            errors.push_back("trainer.milestones: must be strictly increasing");
            break;
        }
        prev = ms;
    }
    if (!trainer.milestones.empty() && trainer.milestones.back() >= trainer.total_iters)
        errors.push_back("trainer.milestones: must be < trainer.total_iters");
    req(metrics.lpips_net == "stub" || metrics.lpips_net == "file",
        "metrics.lpips_net: must be stub or file");
    req(metrics.lpips_net != "file" || !metrics.lpips_path.empty(),
        "metrics.lpips_path: required when metrics.lpips_net is file");
    if (!errors.empty()) raise_errors(errors);
}

std::string ExperimentConfig::schema_help() {
    return R"(Config keys (JSON; defaults shown by `segsr config`):
  scale                    2 or 4
  srnet.style              residual | channel_attention | hybrid_attention
  srnet.k                  SR unit count
  srnet.blocks_total       blocks (residual/hybrid) or groups (channel_attention) across all units
  srnet.blocks_per_group   RCABs per channel-attention group
  srnet.feat_channels      SR body width C_f
  srnet.window             hybrid attention window side
  srnet.attn_heads         hybrid attention heads (must divide feat_channels)
  srnet.shift_windows      alternate shifted windows in hybrid blocks
  srnet.mlp_ratio          hybrid MLP expansion
  srnet.ca_reduction       channel-attention squeeze factor
  srnet.seed               body init seed
  encoder.source           stub | file
  encoder.weights_path     weight container (source=file); relative paths resolve
                           against $SEGSR_WEIGHTS_DIR
  encoder.patch_size       vision transformer patch side
  encoder.depth/width/heads/mlp_ratio
                           transformer dimensions
  encoder.pretrain_grid    side of the positional grid the weights were built for
  encoder.stub_seed        stub weight seed
  encoder.lora.rank        adapter rank (must be < encoder.width)
  encoder.lora.targets     none | attn | attn_ffn
  encoder.lora.seed        adapter init seed
  slm.tied_fusion          share one gated-fusion head across units
  slm.seed                 descriptor bank seed
  lmm.shared_stem          share the first modulation conv between gain and bias
  lmm.seed                 modulator init seed
  ablation.variant         baseline | sfem_additive | sfem_lmm | full
  dataset.root             class-per-subdirectory image tree
  dataset.manifest         split manifest path (written by `segsr split`)
  dataset.ratio            [train, test] shares
  dataset.seed             split shuffle seed
  trainer.total_iters      optimization steps
  trainer.milestones       iterations where the learning rate halves
  trainer.base_lr          initial Adam learning rate
  trainer.lr_factor        decay factor at each milestone
  trainer.batch            patches per step
  trainer.patch            LR patch side (HR side is patch*scale)
  trainer.seed             sampling/augmentation seed
  trainer.augment          random flips/rotations
  trainer.eval_every       eval cadence (0 = total_iters/10)
  trainer.checkpoint_every checkpoint cadence (0 = total_iters/10)
  trainer.grad_clip        max gradient norm (0 = off)
  metrics.y_channel        evaluate PSNR/SSIM on BT.601 luma instead of RGB
  metrics.lpips            compute LPIPS
  metrics.clipscore        compute CLIPScore
  metrics.lpips_net        stub | file
  metrics.lpips_path       feature-net container (lpips_net=file)
  metrics.lpips_seed       stub feature-net seed
  metrics.class_balanced   overall row averages class means
)";
}

} // namespace segsr
