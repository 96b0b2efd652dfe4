#include "metrics.hpp"

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace gazediff {

// ---------------------------------------------------------------------------
// alignment core

double needleman_wunsch(const std::vector<int> & a, const std::vector<int> & b,
                        const std::function<double(int, int)> & substitution, double gap_penalty) {
    const size_t n = a.size();
    const size_t m = b.size();
    std::vector<double> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) {
        prev[j] = gap_penalty * static_cast<double>(j);
    }
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = gap_penalty * static_cast<double>(i);
        for (size_t j = 1; j <= m; ++j) {
            double diag = prev[j - 1] + substitution(a[i - 1], b[j - 1]);
            double up = prev[j] + gap_penalty;
            double left = cur[j - 1] + gap_penalty;
            cur[j] = std::max({diag, up, left});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double string_match_score(const std::vector<int> & a, const std::vector<int> & b) {
    if (a.empty() || b.empty()) {
        throw EmptyScanpath("string_match_score: empty symbol string");
    }
    double raw = needleman_wunsch(
        a, b, [](int x, int y) { return x == y ? 1.0 : 0.0; }, 0.0);
    double norm = raw / static_cast<double>(std::max(a.size(), b.size()));
    return std::clamp(norm, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// ScanMatch

void AlignmentConfig::validate() const {
    if (grid_x < 1 || grid_y < 1) {
        throw ConfigError("scanmatch grid must be at least 1x1");
    }
    if (static_cast<int64_t>(grid_x) * grid_y > 26 * 26) {
        throw ConfigError("scanmatch grid exceeds the two-letter alphabet bound (26*26)");
    }
    if (gap_penalty > 0.0) {
        throw ConfigError("scanmatch gap penalty must be <= 0");
    }
    if (substitution_scale <= 0.0 || duration_bin_ms < 1) {
        throw ConfigError("scanmatch substitution_scale must be > 0 and duration_bin_ms >= 1");
    }
}

namespace {

int duration_repeats(double duration_s, int bin_ms) {
    double r = std::ceil(duration_s * 1000.0 / static_cast<double>(bin_ms));
    return static_cast<int>(std::clamp(r, 1.0, 10.0));
}

std::vector<int> grid_string(const Scanpath & s, const AlignmentConfig & cfg, bool with_duration) {
    std::vector<int> out;
    for (const Fixation & f : s.fixations) {
        int ix = std::min(cfg.grid_x - 1, static_cast<int>(std::floor(f.x * cfg.grid_x)));
        int iy = std::min(cfg.grid_y - 1, static_cast<int>(std::floor(f.y * cfg.grid_y)));
        ix = std::max(ix, 0);
        iy = std::max(iy, 0);
        int sym = iy * cfg.grid_x + ix;
        int reps = with_duration ? duration_repeats(f.duration, cfg.duration_bin_ms) : 1;
        out.insert(out.end(), static_cast<size_t>(reps), sym);
    }
    return out;
}

} // namespace

double scanmatch(const Scanpath & a, const Scanpath & b, const AlignmentConfig & cfg,
                 bool with_duration) {
    cfg.validate();
    if (a.fixations.empty() || b.fixations.empty()) {
        throw EmptyScanpath("scanmatch: empty scanpath");
    }
    std::vector<int> sa = grid_string(a, cfg, with_duration);
    std::vector<int> sb = grid_string(b, cfg, with_duration);

    const double max_dist = std::hypot(static_cast<double>(cfg.grid_x - 1),
                                       static_cast<double>(cfg.grid_y - 1));
    auto substitution = [&](int x, int y) {
        double dist = 0.0;
        if (max_dist > 0.0) {
            double dx = static_cast<double>(x % cfg.grid_x - y % cfg.grid_x);
            double dy = static_cast<double>(x / cfg.grid_x - y / cfg.grid_x);
            dist = std::hypot(dx, dy) / max_dist;
        }
        return cfg.substitution_scale * (1.0 - dist);
    };

    double raw = needleman_wunsch(sa, sb, substitution, cfg.gap_penalty);
    double norm = raw / (static_cast<double>(std::max(sa.size(), sb.size())) * cfg.substitution_scale);
    return std::clamp(norm, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// mean shift and Sequence Score

int ClusterModel::assign(double x, double y) const {
    if (centers.empty()) {
        throw InsufficientScanpaths("cluster model has no centers");
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < centers.size(); ++i) {
        double d = std::hypot(x - centers[i].first, y - centers[i].second);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

std::vector<int> ClusterModel::string_of(const Scanpath & s, bool with_duration,
                                         int duration_bin_ms) const {
    if (s.fixations.empty()) {
        throw EmptyScanpath("cluster string of empty scanpath");
    }
    std::vector<int> out;
    for (const Fixation & f : s.fixations) {
        int sym = assign(f.x, f.y);
        int reps = with_duration ? duration_repeats(f.duration, duration_bin_ms) : 1;
        out.insert(out.end(), static_cast<size_t>(reps), sym);
    }
    return out;
}

ClusterModel meanshift_clusters(const std::vector<std::pair<double, double>> & fixations,
                                double bandwidth) {
    if (fixations.empty()) {
        throw EmptyScanpath("meanshift_clusters: no fixations");
    }
    if (!(bandwidth > 0.0)) {
        throw ConfigError("meanshift_clusters: bandwidth must be > 0");
    }
    constexpr double kTol = 1e-4;
    constexpr int kMaxIter = 200;

    std::vector<std::pair<double, double>> modes;
    modes.reserve(fixations.size());
    for (const auto & start : fixations) {
        double mx = start.first;
        double my = start.second;
        for (int it = 0; it < kMaxIter; ++it) {
            double sx = 0.0, sy = 0.0;
            int n = 0;
            for (const auto & p : fixations) {
                if (std::hypot(p.first - mx, p.second - my) <= bandwidth) {
                    sx += p.first;
                    sy += p.second;
                    ++n;
                }
            }
            double nx = sx / n;
            double ny = sy / n;
            double shift = std::hypot(nx - mx, ny - my);
            mx = nx;
            my = ny;
            if (shift < kTol) {
                break;
            }
        }
        modes.emplace_back(mx, my);
    }

    ClusterModel model;
    model.bandwidth = bandwidth;
    for (const auto & m : modes) {
        bool merged = false;
        for (const auto & c : model.centers) {
            if (std::hypot(m.first - c.first, m.second - c.second) <= bandwidth / 2.0) {
                merged = true;
                break;
            }
        }
        if (!merged) {
            model.centers.push_back(m);
        }
    }
    return model;
}

double sequence_score(const Scanpath & a, const Scanpath & b, const ClusterModel & clusters,
                      bool with_duration, int duration_bin_ms) {
    return string_match_score(clusters.string_of(a, with_duration, duration_bin_ms),
                              clusters.string_of(b, with_duration, duration_bin_ms));
}

double semantic_sequence_score(const Scanpath & a, const Scanpath & b,
                               const SegmentationMap & segmap, bool with_duration,
                               int duration_bin_ms) {
    if (segmap.labels.empty()) {
        throw MissingSegmentation("semantic_sequence_score: empty segmentation map");
    }
    auto label_string = [&](const Scanpath & s) {
        if (s.fixations.empty()) {
            throw EmptyScanpath("semantic_sequence_score: empty scanpath");
        }
        std::vector<int> out;
        for (const Fixation & f : s.fixations) {
            int sym = segmap.label_at(f.x, f.y);
            int reps = with_duration ? duration_repeats(f.duration, duration_bin_ms) : 1;
            out.insert(out.end(), static_cast<size_t>(reps), sym);
        }
        return out;
    };
    return string_match_score(label_string(a), label_string(b));
}

// ---------------------------------------------------------------------------
// MultiMatch

namespace {

struct SaccadeSeq {
    // saccade i runs from fixation i to i+1; start position/duration kept
    std::vector<double> dx, dy, sx, sy, dur;

    size_t size() const { return dx.size(); }
};

double vec_angle(double ax, double ay, double bx, double by) {
    double na = std::hypot(ax, ay);
    double nb = std::hypot(bx, by);
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    double c = (ax * bx + ay * by) / (na * nb);
    return std::acos(std::clamp(c, -1.0, 1.0));
}

SaccadeSeq simplify(const Scanpath & s, double screen_diag, const MultiMatchConfig & cfg) {
    std::vector<Fixation> fx = s.fixations;
    const double dir_thresh = cfg.direction_threshold_deg * 3.14159265358979323846 / 180.0;
    const double amp_thresh = cfg.amplitude_threshold * screen_diag;

    // repeatedly drop the middle fixation of a merge pair: small wobbles
    // (both amplitudes below threshold) or near-collinear continuations
    bool changed = true;
    while (changed && fx.size() > 2) {
        changed = false;
        for (size_t i = 0; i + 2 < fx.size(); ++i) {
            double ux = fx[i + 1].x - fx[i].x;
            double uy = fx[i + 1].y - fx[i].y;
            double vx = fx[i + 2].x - fx[i + 1].x;
            double vy = fx[i + 2].y - fx[i + 1].y;
            bool small = std::hypot(ux, uy) < amp_thresh && std::hypot(vx, vy) < amp_thresh;
            bool straight = vec_angle(ux, uy, vx, vy) < dir_thresh;
            if (small || straight) {
                fx[i].duration += fx[i + 1].duration;
                fx.erase(fx.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                changed = true;
                break;
            }
        }
    }

    SaccadeSeq seq;
    for (size_t i = 0; i + 1 < fx.size(); ++i) {
        seq.dx.push_back(fx[i + 1].x - fx[i].x);
        seq.dy.push_back(fx[i + 1].y - fx[i].y);
        seq.sx.push_back(fx[i].x);
        seq.sy.push_back(fx[i].y);
        seq.dur.push_back(fx[i].duration);
    }
    return seq;
}

// Monotone lattice alignment minimizing the summed pair weights, including
// both endpoints. Ties resolve diagonal, then right, then down.
std::vector<std::pair<int, int>> lattice_align(
    size_t n, size_t m, const std::function<double(size_t, size_t)> & weight) {
    std::vector<std::vector<double>> cost(n, std::vector<double>(m, 0.0));
    std::vector<std::vector<int>> from(n, std::vector<int>(m, -1)); // 0 diag, 1 left, 2 up
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < m; ++j) {
            double w = weight(i, j);
            if (i == 0 && j == 0) {
                cost[i][j] = w;
                continue;
            }
            double best = std::numeric_limits<double>::infinity();
            int arg = -1;
            if (i > 0 && j > 0 && cost[i - 1][j - 1] < best) {
                best = cost[i - 1][j - 1];
                arg = 0;
            }
            if (j > 0 && cost[i][j - 1] < best) {
                best = cost[i][j - 1];
                arg = 1;
            }
            if (i > 0 && cost[i - 1][j] < best) {
                best = cost[i - 1][j];
                arg = 2;
            }
            cost[i][j] = best + w;
            from[i][j] = arg;
        }
    }
    std::vector<std::pair<int, int>> path;
    size_t i = n - 1, j = m - 1;
    while (true) {
        path.emplace_back(static_cast<int>(i), static_cast<int>(j));
        int f = from[i][j];
        if (f == -1) {
            break;
        }
        if (f == 0) {
            --i;
            --j;
        } else if (f == 1) {
            --j;
        } else {
            --i;
        }
    }
    std::reverse(path.begin(), path.end());
    return path;
}

double duration_dissim(double a, double b) {
    double mx = std::max(a, b);
    return mx > 0.0 ? std::fabs(a - b) / mx : 0.0;
}

} // namespace

MultiMatchResult multimatch(const Scanpath & a, const Scanpath & b, double screen_diag,
                            const MultiMatchConfig & cfg) {
    if (a.fixations.empty() || b.fixations.empty()) {
        throw EmptyScanpath("multimatch: empty scanpath");
    }
    if (!(screen_diag > 0.0)) {
        throw ConfigError("multimatch: screen diagonal must be > 0");
    }
    MultiMatchResult res;

    SaccadeSeq u = simplify(a, screen_diag, cfg);
    SaccadeSeq v = simplify(b, screen_diag, cfg);

    if (u.size() == 0 || v.size() == 0) {
        // no saccades on one side: align raw fixation sequences by position
        const auto & fa = a.fixations;
        const auto & fb = b.fixations;
        auto path = lattice_align(fa.size(), fb.size(), [&](size_t i, size_t j) {
            return std::hypot(fa[i].x - fb[j].x, fa[i].y - fb[j].y);
        });
        double pos = 0.0, dur = 0.0;
        for (auto [i, j] : path) {
            pos += std::hypot(fa[static_cast<size_t>(i)].x - fb[static_cast<size_t>(j)].x,
                              fa[static_cast<size_t>(i)].y - fb[static_cast<size_t>(j)].y) /
                   screen_diag;
            dur += duration_dissim(fa[static_cast<size_t>(i)].duration,
                                   fb[static_cast<size_t>(j)].duration);
        }
        double n = static_cast<double>(path.size());
        res.position = std::clamp(1.0 - pos / n, 0.0, 1.0);
        res.duration = std::clamp(1.0 - dur / n, 0.0, 1.0);
        return res;
    }

    auto path = lattice_align(u.size(), v.size(), [&](size_t i, size_t j) {
        return std::hypot(u.dx[i] - v.dx[j], u.dy[i] - v.dy[j]);
    });

    double sh = 0.0, len = 0.0, dir = 0.0, pos = 0.0, dur = 0.0;
    for (auto [pi, pj] : path) {
        size_t i = static_cast<size_t>(pi);
        size_t j = static_cast<size_t>(pj);
        sh += std::hypot(u.dx[i] - v.dx[j], u.dy[i] - v.dy[j]) / (2.0 * screen_diag);
        len += std::fabs(std::hypot(u.dx[i], u.dy[i]) - std::hypot(v.dx[j], v.dy[j])) / screen_diag;
        dir += vec_angle(u.dx[i], u.dy[i], v.dx[j], v.dy[j]) / 3.14159265358979323846;
        pos += std::hypot(u.sx[i] - v.sx[j], u.sy[i] - v.sy[j]) / screen_diag;
        dur += duration_dissim(u.dur[i], v.dur[j]);
    }
    double n = static_cast<double>(path.size());
    res.shape = std::clamp(1.0 - sh / n, 0.0, 1.0);
    res.length = std::clamp(1.0 - len / n, 0.0, 1.0);
    res.direction = std::clamp(1.0 - dir / n, 0.0, 1.0);
    res.position = std::clamp(1.0 - pos / n, 0.0, 1.0);
    res.duration = std::clamp(1.0 - dur / n, 0.0, 1.0);
    return res;
}

// ---------------------------------------------------------------------------
// diversity metrics

namespace {

double mean_cross_ss(const std::vector<Scanpath> & xs, const std::vector<Scanpath> & ys,
                     const ClusterModel & clusters, bool with_duration, int bin_ms) {
    double sum = 0.0;
    int n = 0;
    for (const auto & x : xs) {
        for (const auto & y : ys) {
            sum += sequence_score(x, y, clusters, with_duration, bin_ms);
            ++n;
        }
    }
    return sum / n;
}

double mean_within_ss(const std::vector<Scanpath> & xs, const ClusterModel & clusters,
                      bool with_duration, int bin_ms) {
    double sum = 0.0;
    int n = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        for (size_t j = i + 1; j < xs.size(); ++j) {
            sum += sequence_score(xs[i], xs[j], clusters, with_duration, bin_ms);
            ++n;
        }
    }
    return sum / n;
}

} // namespace

double dss(const std::vector<Scanpath> & gen, const std::vector<Scanpath> & hum,
           const ClusterModel & clusters, bool with_duration, int duration_bin_ms) {
    if (gen.size() < 2 || hum.size() < 2) {
        throw InsufficientScanpaths("dss: need at least two scanpaths per set");
    }
    double cross = mean_cross_ss(gen, hum, clusters, with_duration, duration_bin_ms);
    double wg = mean_within_ss(gen, clusters, with_duration, duration_bin_ms);
    double wh = mean_within_ss(hum, clusters, with_duration, duration_bin_ms);
    return cross / (1.0 + std::fabs(wg - wh));
}

double rss(const std::vector<Scanpath> & gen, const std::vector<Scanpath> & hum,
           const ClusterModel & clusters, double threshold, bool with_duration,
           int duration_bin_ms) {
    if (gen.empty() || hum.empty()) {
        throw InsufficientScanpaths("rss: empty scanpath set");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("rss: threshold must be in (0, 1)");
    }
    int covered = 0;
    for (const auto & h : hum) {
        double best = 0.0;
        for (const auto & g : gen) {
            best = std::max(best, sequence_score(g, h, clusters, with_duration, duration_bin_ms));
            if (best > threshold) {
                break;
            }
        }
        if (best > threshold) {
            ++covered;
        }
    }
    return static_cast<double>(covered) / static_cast<double>(hum.size());
}

// ---------------------------------------------------------------------------
// KL protocol

Histogram shared_histogram(const std::vector<double> & samples, double lo, double hi, int bins) {
    Histogram h;
    h.lo = lo;
    h.hi = hi;
    h.counts.assign(static_cast<size_t>(bins), 0.0);
    const double width = hi - lo;
    for (double s : samples) {
        int idx = width > 0.0 ? static_cast<int>((s - lo) / width * bins) : 0;
        idx = std::clamp(idx, 0, bins - 1);
        h.counts[static_cast<size_t>(idx)] += 1.0;
    }
    return h;
}

double kl_protocol(const std::vector<double> & gen_vs_hum, const std::vector<double> & hum_vs_hum,
                   int bins, double eps) {
    if (gen_vs_hum.empty() || hum_vs_hum.empty()) {
        throw InsufficientScanpaths("kl_protocol: empty metric distribution");
    }
    if (bins < 2) {
        throw ConfigError("kl_protocol: need at least 2 bins");
    }
    if (!(eps > 0.0)) {
        throw ConfigError("kl_protocol: eps must be > 0");
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : gen_vs_hum) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : hum_vs_hum) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) {
        return 0.0; // all mass in one bin on both sides
    }
    Histogram hg = shared_histogram(gen_vs_hum, lo, hi, bins);
    Histogram hh = shared_histogram(hum_vs_hum, lo, hi, bins);

    double zg = 0.0, zh = 0.0;
    for (int i = 0; i < bins; ++i) {
        zg += hg.counts[static_cast<size_t>(i)] + eps;
        zh += hh.counts[static_cast<size_t>(i)] + eps;
    }
    double kl = 0.0;
    for (int i = 0; i < bins; ++i) {
        double p = (hh.counts[static_cast<size_t>(i)] + eps) / zh; // human reference
        double q = (hg.counts[static_cast<size_t>(i)] + eps) / zg; // generated
        kl += p * std::log(p / q);
    }
    return std::max(kl, 0.0);
}

} // namespace gazediff
