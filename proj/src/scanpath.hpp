#pragma once

#include "tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gazediff {

// One gaze rest event. Coordinates are normalized to [0,1]; duration is in
// seconds and stays unscaled.
struct Fixation {
    double x = 0.0;
    double y = 0.0;
    double duration = 0.0;
};

// Ordered fixation sequence with its corpus identity. Free viewing is the
// empty task string.
struct Scanpath {
    std::vector<Fixation> fixations;
    std::string stimulus_id;
    std::string task;
    std::string subject_id;
    int width_px = 1;
    int height_px = 1;

    size_t length() const { return fixations.size(); }
};

// Fixed-length matrix form fed to the model: L x 3 rows (x, y, duration),
// padded rows zero, validity a ones-prefix of length min(N, L).
struct PaddedScanpath {
    Tensor matrix;                // L x 3
    std::vector<double> validity; // L entries in {0, 1}

    int64_t max_len() const { return matrix.rows(); }
    int64_t valid_count() const;
};

// Integer label grid; 0 is background. Lookup is by normalized coordinates.
struct SegmentationMap {
    int width = 0;
    int height = 0;
    std::vector<uint16_t> labels; // row-major, height rows of width

    uint16_t label_at(double x_norm, double y_norm) const;
};

struct StimulusRecord {
    std::string stimulus_id;
    int width_px = 0;
    int height_px = 0;
    std::optional<SegmentationMap> segmentation;
};

// Raw tracker sample in pixel space.
struct RawFixation {
    double x_px = 0.0;
    double y_px = 0.0;
    double duration_s = 0.0;
};

// Scales pixel coordinates into [0,1], clamping slightly off-screen points
// to the frame instead of rejecting them. Durations pass through in seconds.
Scanpath normalize(const std::vector<RawFixation> & raw, int width_px, int height_px);

PaddedScanpath pad_truncate(const Scanpath & s, int64_t max_len);

// Inverse of pad_truncate on the valid prefix (identity on metadata-free
// fixation content).
Scanpath unpad(const PaddedScanpath & p);

// Count of leading entries with probability above the threshold, floored at
// one fixation.
int decode_length(const std::vector<double> & valid_probs, double threshold);

// ---- corpus I/O ----------------------------------------------------------
// JSON-lines corpus, one object per line:
//   {"stimulus_id", "task", "subject_id", "fixations": [[x_px,y_px,dur_s],..],
//    "width_px", "height_px"}
// Loading normalizes coordinates; saving maps them back to pixel space.

std::vector<Scanpath> load_corpus(const std::string & path);
void save_corpus(const std::string & path, const std::vector<Scanpath> & records);

// ---- SDSG segmentation raster ---------------------------------------------
// "SDSG" magic, u32 width, u32 height, then width*height u16 labels.

SegmentationMap load_segmentation(const std::string & path);
void save_segmentation(const std::string & path, const SegmentationMap & map);

} // namespace gazediff
