#include "segsr/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "segsr/bicubic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace segsr {

namespace {

bool is_png(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    return ext == ".png";
}

} // namespace

std::string DatasetManifest::to_json() const {
    json j;
    j["root"] = root;
    j["ratio"] = {ratio_train, ratio_test};
    j["seed"] = seed;
    json cl = json::object();
    for (const ClassSplit& c : classes) {
        cl[c.name] = {{"train", c.train}, {"test", c.test}};
    }
    j["classes"] = cl;
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    check(!j.is_discarded(), "manifest: invalid JSON");
    DatasetManifest m;
    try {
        m.root = j.at("root").get<std::string>();
        m.ratio_train = j.at("ratio").at(0).get<int>();
        m.ratio_test = j.at("ratio").at(1).get<int>();
        m.seed = j.at("seed").get<uint64_t>();
        for (auto& [name, val] : j.at("classes").items()) {
            ClassSplit c;
            c.name = name;
            c.train = val.at("train").get<std::vector<std::string>>();
            c.test = val.at("test").get<std::vector<std::string>>();
            m.classes.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        fail(std::string("manifest: missing or malformed field: ") + e.what());
    }
    return m;
}

void DatasetManifest::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "manifest: cannot write '" + path + "'");
    os << to_json();
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "manifest: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(text);
}

size_t DatasetManifest::train_count() const {
    size_t n = 0;
    for (const ClassSplit& c : classes) n += c.train.size();
    return n;
}

size_t DatasetManifest::test_count() const {
    size_t n = 0;
    for (const ClassSplit& c : classes) n += c.test.size();
    return n;
}

std::vector<std::pair<std::string, std::string>> DatasetManifest::split_list(
    const std::string& split) const {
    check(split == "train" || split == "test", "manifest: split must be train or test");
    std::vector<std::pair<std::string, std::string>> out;
    for (const ClassSplit& c : classes)
        for (const std::string& p : (split == "train" ? c.train : c.test)) out.emplace_back(c.name, p);
    return out;
}

DatasetManifest split_dataset(const std::string& root, int ratio_train, int ratio_test,
                              uint64_t seed) {
    check(ratio_train >= 1 && ratio_test >= 0, "split: ratio must be train>=1, test>=0");
    check(fs::is_directory(root), "split: root '" + root + "' is not a directory");

    std::vector<std::string> class_names;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_names.push_back(e.path().filename().string());
    std::sort(class_names.begin(), class_names.end());
    check(!class_names.empty(), "split: no class subdirectories under '" + root + "'");

    DatasetManifest m;
    m.root = root;
    m.ratio_train = ratio_train;
    m.ratio_test = ratio_test;
    m.seed = seed;

    Rng rng(seed);
    for (const std::string& cname : class_names) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root) / cname))
            if (e.is_regular_file() && is_png(e.path()))
                files.push_back(cname + "/" + e.path().filename().string());
        std::sort(files.begin(), files.end());
        check(!files.empty(), "split: class '" + cname + "' contains no images");

        rng.shuffle(files);
        size_t n_train = files.size() * static_cast<size_t>(ratio_train) /
                         static_cast<size_t>(ratio_train + ratio_test);
        ClassSplit c;
        c.name = cname;
        c.train.assign(files.begin(), files.begin() + static_cast<long>(n_train));
        c.test.assign(files.begin() + static_cast<long>(n_train), files.end());
        std::sort(c.train.begin(), c.train.end());
        std::sort(c.test.begin(), c.test.end());
        m.classes.push_back(std::move(c));
    }
    return m;
}

PairedSample augment(const PairedSample& pair, Rng& rng, bool rotations) {
    check(pair.hr.rank() == 3 && pair.lr.rank() == 3, "augment: [C,H,W] patches expected");
    if (rotations && (pair.hr.dim(1) != pair.hr.dim(2) || pair.lr.dim(1) != pair.lr.dim(2)))
        fail("augment: rotations enabled but patches are not square");
    int op = static_cast<int>(rng.below(rotations ? 8 : 2) * (rotations ? 1 : 4));
    // rotations disabled: draw from {identity, horizontal flip}
    PairedSample out;
    out.hr = dihedral(pair.hr, op);
    out.lr = dihedral(pair.lr, op);
    out.class_name = pair.class_name;
    out.path = pair.path;
    return out;
}

PatchSampler::PatchSampler(const DatasetManifest& manifest, int scale)
    : manifest_(manifest), scale_(scale) {
    check(scale_ >= 1, "sampler: scale must be >= 1");
    train_ = manifest_.split_list("train");
    check(!train_.empty(), "sampler: manifest has no training images");
}

const Tensor& PatchSampler::load_image(const std::string& rel_path) {
    auto it = cache_.find(rel_path);
    if (it != cache_.end()) return it->second;
    fs::path full = fs::path(manifest_.root) / rel_path;
    Tensor t = image_to_tensor(read_png(full.string()));
    return cache_.emplace(rel_path, std::move(t)).first->second;
}

std::vector<PairedSample> PatchSampler::sample_batch(int patch_lr, int batch, Rng& rng) {
    check(patch_lr >= 1 && batch >= 1, "sample_batch: bad patch or batch size");
    const int hr_patch = patch_lr * scale_;
    std::vector<PairedSample> out;
    out.reserve(batch);
    int attempts = 0;
    const int max_attempts = 100 * batch + 100;
    while (static_cast<int>(out.size()) < batch) {
        check(++attempts <= max_attempts,
              "sample_batch: no training image is at least " + std::to_string(hr_patch) + "px");
        auto& [cname, rel] = train_[rng.below(train_.size())];
        const Tensor& img = load_image(rel);
        int h = img.dim(1), w = img.dim(2);
        if (h < hr_patch || w < hr_patch) {
            std::cerr << "sample_batch: skipping '" << rel << "' (" << w << "x" << h
                      << " smaller than HR patch " << hr_patch << ")\n";
            continue;
        }
        int y0 = h == hr_patch ? 0 : static_cast<int>(rng.below(h - hr_patch + 1));
        int x0 = w == hr_patch ? 0 : static_cast<int>(rng.below(w - hr_patch + 1));

        std::vector<double> crop(static_cast<size_t>(3) * hr_patch * hr_patch);
        const int64_t hw = static_cast<int64_t>(h) * w;
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < hr_patch; ++y)
                for (int x = 0; x < hr_patch; ++x)
                    crop[(static_cast<int64_t>(ch) * hr_patch + y) * hr_patch + x] =
                        img.data()[ch * hw + static_cast<int64_t>(y0 + y) * w + x0 + x];
        PairedSample p;
        p.hr = Tensor::from_data({3, hr_patch, hr_patch}, std::move(crop));
        p.lr = bicubic_resize(p.hr, patch_lr, patch_lr);
        p.class_name = cname;
        p.path = rel;
        out.push_back(std::move(p));
    }
    return out;
}

int degrade_tree(const std::string& root, const std::string& out_root, int scale) {
    check(fs::is_directory(root), "degrade: root '" + root + "' is not a directory");
    check(scale >= 1, "degrade: scale must be >= 1");
    int written = 0;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && is_png(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
        Tensor img = image_to_tensor(read_png(p.string()));
        int oh = img.dim(1) / scale, ow = img.dim(2) / scale;
        check(oh >= 1 && ow >= 1, "degrade: '" + p.string() + "' smaller than the scale factor");
        Tensor lr = bicubic_resize(img, oh, ow);
        fs::path rel = fs::relative(p, root);
        fs::path dst = fs::path(out_root) / rel;
        fs::create_directories(dst.parent_path());
        write_png(dst.string(), tensor_to_image(lr));
        ++written;
    }
    return written;
}

} // namespace segsr
