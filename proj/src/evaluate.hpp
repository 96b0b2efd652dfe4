#pragma once

#include "metrics.hpp"
#include "scanpath.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace gazediff {

struct EvalOptions {
    AlignmentConfig scanmatch;
    double ss_bandwidth = 0.1;
    double rss_threshold = 0.7;
    int kl_bins = 32;
    double kl_eps = 1e-6;
    // KL(human || generated) penalizes generated distributions that miss
    // human mass; the flipped direction is available for comparison.
    bool kl_generated_reference = false;
    MultiMatchConfig multimatch;
    int threads = 1;

    static EvalOptions from_json(const nlohmann::json & j);
    nlohmann::ordered_json to_json() const;
};

// Looks up the segmentation map for a stimulus, or null when unavailable.
using SegmapLookup = std::function<const SegmentationMap *(const std::string & stimulus_id)>;

// Full evaluation protocol over a (generated, human) corpus pair: per
// (stimulus, task) group, pairwise metric samples for gen-vs-human and
// human-vs-human pairings, pooled into per-metric distributions compared by
// KL divergence; DSS and RSS averaged over qualifying groups.
nlohmann::ordered_json evaluate_corpora(const std::vector<Scanpath> & generated,
                                        const std::vector<Scanpath> & human,
                                        const SegmapLookup & segmaps, const EvalOptions & opts);

SegmapLookup segmap_directory_lookup(const std::string & dir);

} // namespace gazediff
