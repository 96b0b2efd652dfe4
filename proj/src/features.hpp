#pragma once

#include "tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace gazediff {

// Dense patch-grid feature map from a visual backbone (or the toy encoder).
struct VisualFeatureMap {
    int h = 0;
    int w = 0;
    int dim = 0;
    Tensor grid; // shape {h, w, dim}

    int64_t patches() const { return static_cast<int64_t>(h) * w; }
    // Flattened (h*w) x dim matrix view, row-major over patches.
    Tensor flattened() const { return grid.reshaped({patches(), dim}); }
};

struct TaskFeature {
    Tensor vec; // shape {d_t}
    int dim() const { return static_cast<int>(vec.numel()); }
};

// ---- SDFT feature files ----------------------------------------------------
// "SDFT" magic, u32 version, u8 rank, u32 dims, u32 CRC32 of the payload,
// payload little-endian f32. Rank 3 = visual map (h, w, d_v); rank 1 = task
// feature (d_t).

void save_feature_file(const std::string & path, const Tensor & t);
Tensor load_feature_file(const std::string & path);
VisualFeatureMap load_visual_features(const std::string & path);
TaskFeature load_task_features(const std::string & path);

// ---- toy encoder -----------------------------------------------------------

// Stand-in for a frozen visual backbone: a deterministic per-seed random
// projection of flattened image patches. Images whose sides are not
// divisible by the patch size are nearest-neighbor resized down to the
// closest multiple first.
VisualFeatureMap toy_encode(const Tensor & image, int patch, int d_v, uint64_t seed);

// Task string -> fixed pseudo-random unit-scale vector, keyed by the string
// content and task_seed so training and sampling agree without extra files.
TaskFeature derive_task_feature(const std::string & task, int d_t, uint64_t task_seed);

// Feature lookup over a directory of "<identifier>.sdft" files. Stimulus
// features must exist on disk; task features fall back to the derived
// vector when no file overrides them. Lookups are cached.
class FeatureSource {
public:
    FeatureSource(std::string dir, int d_t, uint64_t task_seed);

    const VisualFeatureMap & visual(const std::string & stimulus_id);
    const TaskFeature & task(const std::string & task_string);

    int d_t() const { return d_t_; }
    uint64_t task_seed() const { return task_seed_; }
    const std::string & dir() const { return dir_; }

private:
    std::string dir_;
    int d_t_;
    uint64_t task_seed_;
    std::map<std::string, VisualFeatureMap> visual_cache_;
    std::map<std::string, TaskFeature> task_cache_;
};

} // namespace gazediff
