#pragma once

#include "scanpath.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gazediff {

// ---------------------------------------------------------------------------
// global alignment core

// Needleman-Wunsch over integer symbol strings; maximizes total score with
// the given substitution function and (nonpositive) gap penalty.
double needleman_wunsch(const std::vector<int> & a, const std::vector<int> & b,
                        const std::function<double(int, int)> & substitution, double gap_penalty);

// ---------------------------------------------------------------------------
// ScanMatch

struct AlignmentConfig {
    int grid_x = 12;
    int grid_y = 8;
    double gap_penalty = 0.0;      // <= 0
    double substitution_scale = 1.0;
    int duration_bin_ms = 50;      // letter repetition quantum for the
                                   // duration-aware variants (10 repeat cap)
    void validate() const;
};

// Spatially binned global alignment similarity in [0,1]. The duration-aware
// variant repeats each letter ceil(duration / duration_bin_ms) times.
double scanmatch(const Scanpath & a, const Scanpath & b, const AlignmentConfig & cfg,
                 bool with_duration);

// ---------------------------------------------------------------------------
// Sequence Score family

// Fixation-cluster alphabet for SS, built per stimulus from the union of the
// human fixations on it.
struct ClusterModel {
    std::vector<std::pair<double, double>> centers;
    double bandwidth = 0.1;

    int assign(double x, double y) const; // nearest center index
    std::vector<int> string_of(const Scanpath & s, bool with_duration, int duration_bin_ms) const;
};

// Flat-kernel mean shift; modes closer than bandwidth/2 are merged.
// Deterministic given input order.
ClusterModel meanshift_clusters(const std::vector<std::pair<double, double>> & fixations,
                                double bandwidth);

// Normalized match count of globally aligned cluster strings
// (match 1, mismatch 0, gap 0), in [0,1].
double sequence_score(const Scanpath & a, const Scanpath & b, const ClusterModel & clusters,
                      bool with_duration, int duration_bin_ms = 50);

// Same alignment scoring over fixated segmentation labels.
double semantic_sequence_score(const Scanpath & a, const Scanpath & b, const SegmentationMap & segmap,
                               bool with_duration, int duration_bin_ms = 50);

double string_match_score(const std::vector<int> & a, const std::vector<int> & b);

// ---------------------------------------------------------------------------
// MultiMatch

// Five similarity dimensions over aligned saccade vectors. Paths with fewer
// than two fixations have no saccades: the vector dimensions are reported
// absent (not zero) and position/duration fall back to a fixation alignment.
struct MultiMatchResult {
    std::optional<double> shape;
    std::optional<double> length;
    std::optional<double> direction;
    double position = 0.0;
    double duration = 0.0;
};

struct MultiMatchConfig {
    double direction_threshold_deg = 45.0; // saccade simplification
    double amplitude_threshold = 0.1;      // fraction of screen diagonal
};

MultiMatchResult multimatch(const Scanpath & a, const Scanpath & b, double screen_diag,
                            const MultiMatchConfig & cfg = {});

// ---------------------------------------------------------------------------
// diversity metrics

// Cross-set mean SS divided by 1 + |within-gen SS - within-human SS|.
// Within-set means are over unordered distinct pairs (self-pairs excluded).
double dss(const std::vector<Scanpath> & gen, const std::vector<Scanpath> & hum,
           const ClusterModel & clusters, bool with_duration = false, int duration_bin_ms = 50);

// Fraction of human scanpaths whose best SS against the generated set
// exceeds the threshold.
double rss(const std::vector<Scanpath> & gen, const std::vector<Scanpath> & hum,
           const ClusterModel & clusters, double threshold, bool with_duration = false,
           int duration_bin_ms = 50);

// ---------------------------------------------------------------------------
// KL evaluation protocol

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> counts;
};

Histogram shared_histogram(const std::vector<double> & samples, double lo, double hi, int bins);

// KL(P_hum || P_gen) over shared-range equal-width histograms with add-eps
// smoothing, in nats. A degenerate zero-width support yields 0.
double kl_protocol(const std::vector<double> & gen_vs_hum, const std::vector<double> & hum_vs_hum,
                   int bins, double eps);

} // namespace gazediff
