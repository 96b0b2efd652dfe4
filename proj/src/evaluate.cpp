#include "evaluate.hpp"

#include "errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <thread>

namespace gazediff {

using nlohmann::json;
using nlohmann::ordered_json;

EvalOptions EvalOptions::from_json(const json & j) {
    EvalOptions o;
    if (j.is_null()) {
        return o;
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string & k = it.key();
        if (k == "sm_grid_x") {
            o.scanmatch.grid_x = it->get<int>();
        } else if (k == "sm_grid_y") {
            o.scanmatch.grid_y = it->get<int>();
        } else if (k == "sm_gap_penalty") {
            o.scanmatch.gap_penalty = it->get<double>();
        } else if (k == "sm_substitution_scale") {
            o.scanmatch.substitution_scale = it->get<double>();
        } else if (k == "duration_bin_ms") {
            o.scanmatch.duration_bin_ms = it->get<int>();
        } else if (k == "ss_bandwidth") {
            o.ss_bandwidth = it->get<double>();
        } else if (k == "rss_threshold") {
            o.rss_threshold = it->get<double>();
        } else if (k == "kl_bins") {
            o.kl_bins = it->get<int>();
        } else if (k == "kl_eps") {
            o.kl_eps = it->get<double>();
        } else if (k == "kl_generated_reference") {
            o.kl_generated_reference = it->get<bool>();
        } else if (k == "mm_direction_threshold_deg") {
            o.multimatch.direction_threshold_deg = it->get<double>();
        } else if (k == "mm_amplitude_threshold") {
            o.multimatch.amplitude_threshold = it->get<double>();
        } else if (k == "threads") {
            o.threads = it->get<int>();
        } else {
            throw ConfigError("unknown evaluation option: " + k);
        }
    }
    return o;
}

ordered_json EvalOptions::to_json() const {
    ordered_json j;
    j["sm_grid_x"] = scanmatch.grid_x;
    j["sm_grid_y"] = scanmatch.grid_y;
    j["sm_gap_penalty"] = scanmatch.gap_penalty;
    j["sm_substitution_scale"] = scanmatch.substitution_scale;
    j["duration_bin_ms"] = scanmatch.duration_bin_ms;
    j["ss_bandwidth"] = ss_bandwidth;
    j["rss_threshold"] = rss_threshold;
    j["kl_bins"] = kl_bins;
    j["kl_eps"] = kl_eps;
    j["kl_direction"] =
        kl_generated_reference ? "generated_vs_human" : "human_vs_generated";
    j["mm_direction_threshold_deg"] = multimatch.direction_threshold_deg;
    j["mm_amplitude_threshold"] = multimatch.amplitude_threshold;
    return j;
}

namespace {

constexpr const char * kMetricNames[] = {
    "mm_shape",         "mm_length",           "mm_direction", "mm_position",
    "mm_duration",      "sm_with_duration",    "sm_without_duration",
    "ss_with_duration", "ss_without_duration", "semss_with_duration",
    "semss_without_duration",
};
constexpr size_t kMetricCount = sizeof(kMetricNames) / sizeof(kMetricNames[0]);

// normalized coordinate space
constexpr double kScreenDiag = 1.4142135623730951;

struct GroupResult {
    std::vector<double> gen_samples[kMetricCount];
    std::vector<double> hum_samples[kMetricCount];
    double best_match_sum[kMetricCount] = {};
    int best_match_count[kMetricCount] = {};
    std::optional<double> dss_value;
    std::optional<double> rss_value;
    std::string stimulus_id;
    std::string task;
    size_t n_gen = 0;
    size_t n_hum = 0;
};

struct PairScores {
    std::optional<double> value[kMetricCount];
};

PairScores score_pair(const Scanpath & g, const Scanpath & h, const ClusterModel & clusters,
                      const SegmentationMap * segmap, const EvalOptions & opts) {
    PairScores s;
    MultiMatchResult mm = multimatch(g, h, kScreenDiag, opts.multimatch);
    // degenerate vector dimensions stay absent instead of polluting the
    // distributions with zeros
    if (mm.shape) {
        s.value[0] = *mm.shape;
        s.value[1] = *mm.length;
        s.value[2] = *mm.direction;
    }
    s.value[3] = mm.position;
    s.value[4] = mm.duration;
    s.value[5] = scanmatch(g, h, opts.scanmatch, true);
    s.value[6] = scanmatch(g, h, opts.scanmatch, false);
    s.value[7] = sequence_score(g, h, clusters, true, opts.scanmatch.duration_bin_ms);
    s.value[8] = sequence_score(g, h, clusters, false, opts.scanmatch.duration_bin_ms);
    if (segmap != nullptr) {
        s.value[9] = semantic_sequence_score(g, h, *segmap, true, opts.scanmatch.duration_bin_ms);
        s.value[10] = semantic_sequence_score(g, h, *segmap, false, opts.scanmatch.duration_bin_ms);
    }
    return s;
}

GroupResult evaluate_group(const std::vector<const Scanpath *> & gen,
                           const std::vector<const Scanpath *> & hum,
                           const SegmentationMap * segmap, const EvalOptions & opts) {
    GroupResult r;
    r.n_gen = gen.size();
    r.n_hum = hum.size();

    std::vector<std::pair<double, double>> union_fix;
    for (const Scanpath * h : hum) {
        for (const Fixation & f : h->fixations) {
            union_fix.emplace_back(f.x, f.y);
        }
    }
    ClusterModel clusters = meanshift_clusters(union_fix, opts.ss_bandwidth);

    // generated vs human; identical subject ids mark the same recording and
    // are skipped so an identity evaluation reproduces human consistency
    for (const Scanpath * g : gen) {
        double best[kMetricCount];
        bool any[kMetricCount] = {};
        std::fill(best, best + kMetricCount, 0.0);
        for (const Scanpath * h : hum) {
            if (g->subject_id == h->subject_id) {
                continue;
            }
            PairScores s = score_pair(*g, *h, clusters, segmap, opts);
            for (size_t m = 0; m < kMetricCount; ++m) {
                if (s.value[m]) {
                    r.gen_samples[m].push_back(*s.value[m]);
                    best[m] = std::max(best[m], *s.value[m]);
                    any[m] = true;
                }
            }
        }
        for (size_t m = 0; m < kMetricCount; ++m) {
            if (any[m]) {
                r.best_match_sum[m] += best[m];
                r.best_match_count[m] += 1;
            }
        }
    }

    // human consistency: unordered distinct pairs
    for (size_t i = 0; i < hum.size(); ++i) {
        for (size_t j = i + 1; j < hum.size(); ++j) {
            PairScores s = score_pair(*hum[i], *hum[j], clusters, segmap, opts);
            for (size_t m = 0; m < kMetricCount; ++m) {
                if (s.value[m]) {
                    r.hum_samples[m].push_back(*s.value[m]);
                }
            }
        }
    }

    std::vector<Scanpath> gen_copy, hum_copy;
    for (const Scanpath * g : gen) {
        gen_copy.push_back(*g);
    }
    for (const Scanpath * h : hum) {
        hum_copy.push_back(*h);
    }
    if (gen.size() >= 2 && hum.size() >= 2) {
        r.dss_value = dss(gen_copy, hum_copy, clusters, false, opts.scanmatch.duration_bin_ms);
    }
    if (!gen.empty() && !hum.empty()) {
        r.rss_value = rss(gen_copy, hum_copy, clusters, opts.rss_threshold, false,
                          opts.scanmatch.duration_bin_ms);
    }
    return r;
}

ordered_json histogram_json(const Histogram & h) {
    ordered_json j;
    j["lo"] = h.lo;
    j["hi"] = h.hi;
    j["counts"] = h.counts;
    return j;
}

ordered_json distribution_json(const std::vector<double> & samples, int bins) {
    ordered_json j;
    j["n"] = samples.size();
    j["samples"] = samples;
    if (!samples.empty()) {
        double lo = *std::min_element(samples.begin(), samples.end());
        double hi = *std::max_element(samples.begin(), samples.end());
        j["histogram"] = histogram_json(shared_histogram(samples, lo, hi, bins));
        double mean = 0.0;
        for (double v : samples) {
            mean += v;
        }
        j["mean"] = mean / static_cast<double>(samples.size());
    }
    return j;
}

} // namespace

SegmapLookup segmap_directory_lookup(const std::string & dir) {
    auto cache = std::make_shared<std::map<std::string, std::optional<SegmentationMap>>>();
    return [dir, cache](const std::string & stimulus_id) -> const SegmentationMap * {
        auto it = cache->find(stimulus_id);
        if (it == cache->end()) {
            std::filesystem::path p = std::filesystem::path(dir) / (stimulus_id + ".sdsg");
            std::optional<SegmentationMap> loaded;
            if (!dir.empty() && std::filesystem::exists(p)) {
                loaded = load_segmentation(p.string());
            }
            it = cache->emplace(stimulus_id, std::move(loaded)).first;
        }
        return it->second.has_value() ? &*it->second : nullptr;
    };
}

ordered_json evaluate_corpora(const std::vector<Scanpath> & generated,
                              const std::vector<Scanpath> & human, const SegmapLookup & segmaps,
                              const EvalOptions & opts) {
    if (human.empty()) {
        throw InsufficientScanpaths("evaluate: human corpus is empty");
    }
    if (generated.empty()) {
        throw InsufficientScanpaths("evaluate: generated corpus is empty");
    }

    // group by (stimulus, task); map order fixes the reduction order
    using Key = std::pair<std::string, std::string>;
    std::map<Key, std::pair<std::vector<const Scanpath *>, std::vector<const Scanpath *>>> groups;
    for (const Scanpath & g : generated) {
        groups[{g.stimulus_id, g.task}].first.push_back(&g);
    }
    for (const Scanpath & h : human) {
        groups[{h.stimulus_id, h.task}].second.push_back(&h);
    }

    struct Work {
        const Key * key;
        const std::vector<const Scanpath *> * gen;
        const std::vector<const Scanpath *> * hum;
        const SegmentationMap * segmap;
    };
    std::vector<Work> work;
    for (const auto & [key, pair] : groups) {
        if (pair.first.empty() || pair.second.empty()) {
            continue; // no counterpart on this stimulus/task
        }
        work.push_back({&key, &pair.first, &pair.second, segmaps ? segmaps(key.first) : nullptr});
    }
    if (work.empty()) {
        throw InsufficientScanpaths(
            "evaluate: no (stimulus, task) group present in both corpora");
    }

    std::vector<GroupResult> results(work.size());
    int threads = std::clamp(opts.threads, 1, static_cast<int>(work.size()));
    if (threads == 1) {
        for (size_t i = 0; i < work.size(); ++i) {
            results[i] = evaluate_group(*work[i].gen, *work[i].hum, work[i].segmap, opts);
            results[i].stimulus_id = work[i].key->first;
            results[i].task = work[i].key->second;
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
        for (int w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (size_t i = next.fetch_add(1); i < work.size(); i = next.fetch_add(1)) {
                        results[i] =
                            evaluate_group(*work[i].gen, *work[i].hum, work[i].segmap, opts);
                        results[i].stimulus_id = work[i].key->first;
                        results[i].task = work[i].key->second;
                    }
                } catch (...) {
                    errors[static_cast<size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto & th : pool) {
            th.join();
        }
        for (auto & e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }

    // deterministic merge in group order
    std::vector<double> gen_pool[kMetricCount];
    std::vector<double> hum_pool[kMetricCount];
    double best_sum[kMetricCount] = {};
    int best_count[kMetricCount] = {};
    std::vector<double> dss_values, rss_values;
    ordered_json per_stimulus = ordered_json::array();
    for (const GroupResult & r : results) {
        for (size_t m = 0; m < kMetricCount; ++m) {
            gen_pool[m].insert(gen_pool[m].end(), r.gen_samples[m].begin(), r.gen_samples[m].end());
            hum_pool[m].insert(hum_pool[m].end(), r.hum_samples[m].begin(), r.hum_samples[m].end());
            best_sum[m] += r.best_match_sum[m];
            best_count[m] += r.best_match_count[m];
        }
        ordered_json g;
        g["stimulus_id"] = r.stimulus_id;
        g["task"] = r.task;
        g["n_generated"] = r.n_gen;
        g["n_human"] = r.n_hum;
        if (r.dss_value) {
            g["dss"] = *r.dss_value;
        }
        if (r.rss_value) {
            g["rss"] = *r.rss_value;
        }
        per_stimulus.push_back(std::move(g));
        if (r.dss_value) {
            dss_values.push_back(*r.dss_value);
        }
        if (r.rss_value) {
            rss_values.push_back(*r.rss_value);
        }
    }

    ordered_json metrics;
    double kl_by_metric[kMetricCount];
    bool kl_present[kMetricCount] = {};
    for (size_t m = 0; m < kMetricCount; ++m) {
        ordered_json entry;
        entry["gen_vs_human"] = distribution_json(gen_pool[m], opts.kl_bins);
        entry["human_vs_human"] = distribution_json(hum_pool[m], opts.kl_bins);
        if (!gen_pool[m].empty() && !hum_pool[m].empty()) {
            double kl = opts.kl_generated_reference
                            ? kl_protocol(hum_pool[m], gen_pool[m], opts.kl_bins, opts.kl_eps)
                            : kl_protocol(gen_pool[m], hum_pool[m], opts.kl_bins, opts.kl_eps);
            entry["kl"] = kl;
            kl_by_metric[m] = kl;
            kl_present[m] = true;
        } else {
            entry["kl"] = nullptr;
        }
        if (best_count[m] > 0) {
            entry["best_match_mean"] = best_sum[m] / best_count[m];
        }
        metrics[kMetricNames[m]] = std::move(entry);
    }

    auto mean_of = [](const std::vector<double> & v) -> ordered_json {
        if (v.empty()) {
            return nullptr;
        }
        double s = 0.0;
        for (double x : v) {
            s += x;
        }
        return s / static_cast<double>(v.size());
    };

    // flat table mirroring the usual benchmark column layout
    ordered_json summary;
    {
        ordered_json mm;
        const char * cols[5] = {"Sh", "Len", "Dir", "Pos", "Dur"};
        double avg = 0.0;
        int n_avg = 0;
        for (size_t m = 0; m < 5; ++m) {
            mm[cols[m]] = kl_present[m] ? ordered_json(kl_by_metric[m]) : ordered_json(nullptr);
            if (kl_present[m]) {
                avg += kl_by_metric[m];
                ++n_avg;
            }
        }
        mm["Avg"] = n_avg > 0 ? ordered_json(avg / n_avg) : ordered_json(nullptr);
        summary["MM"] = std::move(mm);
    }
    auto kl_or_null = [&](size_t m) {
        return kl_present[m] ? ordered_json(kl_by_metric[m]) : ordered_json(nullptr);
    };
    summary["SM"] = {{"w_dur", kl_or_null(5)}, {"wo_dur", kl_or_null(6)}};
    summary["SS"] = {{"w_dur", kl_or_null(7)}, {"wo_dur", kl_or_null(8)}};
    summary["SemSS"] = {{"w_dur", kl_or_null(9)}, {"wo_dur", kl_or_null(10)}};
    summary["DSS"] = mean_of(dss_values);
    summary["RSS"] = mean_of(rss_values);

    ordered_json report;
    report["format"] = "gazediff-report";
    report["version"] = 1;
    report["options"] = opts.to_json();
    report["n_generated"] = generated.size();
    report["n_human"] = human.size();
    report["n_groups"] = work.size();
    report["summary"] = std::move(summary);
    report["metrics"] = std::move(metrics);
    report["per_stimulus"] = std::move(per_stimulus);
    return report;
}

} // namespace gazediff
