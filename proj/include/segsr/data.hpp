#pragma once

#include <map>
#include <string>
#include <vector>

#include "segsr/image.hpp"
#include "segsr/rng.hpp"
#include "segsr/tensor.hpp"

namespace segsr {

struct ClassSplit {
    std::string name;
    std::vector<std::string> train; // paths relative to root
    std::vector<std::string> test;
};

// Class-stratified split of an image tree. Deterministic under
// (root contents, ratio, seed); serialized as JSON (schema in docs/formats.md).
struct DatasetManifest {
    std::string root;
    int ratio_train = 3;
    int ratio_test = 1;
    uint64_t seed = 0;
    std::vector<ClassSplit> classes;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);

    size_t train_count() const;
    size_t test_count() const;
    std::vector<std::pair<std::string, std::string>> split_list(const std::string& split) const;
};

// root must contain one subdirectory per class holding PNG images.
DatasetManifest split_dataset(const std::string& root, int ratio_train, int ratio_test,
                              uint64_t seed);

struct PairedSample {
    Tensor hr; // [3, s*P, s*P]
    Tensor lr; // [3, P, P], bicubic downscale of hr
    std::string class_name;
    std::string path;
};

// One of the 8 dihedral transforms, drawn uniformly and applied identically
// to both patches.
PairedSample augment(const PairedSample& pair, Rng& rng, bool rotations = true);

// Crop-then-degrade sampler: HR crops at seeded random positions, LR built
// by bicubic downscale of the crop. Decoded images are cached.
class PatchSampler {
public:
    PatchSampler(const DatasetManifest& manifest, int scale);

    std::vector<PairedSample> sample_batch(int patch_lr, int batch, Rng& rng);

    const Tensor& load_image(const std::string& rel_path);

private:
    const DatasetManifest& manifest_;
    int scale_;
    std::vector<std::pair<std::string, std::string>> train_; // (class, path)
    std::map<std::string, Tensor> cache_;
};

// Writes a bicubic-downscaled mirror tree of root into out_root.
// Returns the number of images written.
int degrade_tree(const std::string& root, const std::string& out_root, int scale);

} // namespace segsr
