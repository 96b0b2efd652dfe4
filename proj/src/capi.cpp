#include "gazediff.h"

#include "errors.hpp"
#include "evaluate.hpp"
#include "gradcheck.hpp"
#include "scanpath.hpp"
#include "train.hpp"
#include "version.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

using namespace gazediff;

extern "C" {

struct gd_corpus {
    std::vector<Scanpath> records;
};

struct gd_model {
    LoadedModel loaded;
};

struct gd_report {
    nlohmann::ordered_json json;
    std::string serialized;
};

} // extern "C"

namespace {

thread_local std::string g_last_error;

gd_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage:
            return GD_ERR_USAGE;
        case ErrorKind::Numeric:
            return GD_ERR_NUMERIC;
        case ErrorKind::Data:
        default:
            return GD_ERR_DATA;
    }
}

template <typename Fn>
gd_status guarded(Fn && fn) {
    try {
        fn();
        g_last_error.clear();
        return GD_OK;
    } catch (const Error & e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception & e) {
        g_last_error = e.what();
        return GD_ERR_DATA;
    } catch (...) {
        g_last_error = "unknown error";
        return GD_ERR_DATA;
    }
}

void require_arg(const void * p, const char * name) {
    if (p == nullptr) {
        throw UsageError(std::string("null argument: ") + name);
    }
}

} // namespace

extern "C" {

GD_API const char * gd_version(void) {
    return GAZEDIFF_VERSION;
}

GD_API const char * gd_last_error(void) {
    return g_last_error.c_str();
}

// ---- corpora ---------------------------------------------------------------

GD_API gd_status gd_corpus_load(const char * path, gd_corpus ** out) {
    return guarded([&] {
        require_arg(path, "path");
        require_arg(out, "out");
        auto corpus = std::make_unique<gd_corpus>();
        corpus->records = load_corpus(path);
        *out = corpus.release();
    });
}

GD_API gd_status gd_corpus_save(const gd_corpus * corpus, const char * path) {
    return guarded([&] {
        require_arg(corpus, "corpus");
        require_arg(path, "path");
        save_corpus(path, corpus->records);
    });
}

GD_API size_t gd_corpus_size(const gd_corpus * corpus) {
    return corpus == nullptr ? 0 : corpus->records.size();
}

GD_API void gd_corpus_free(gd_corpus * corpus) {
    delete corpus;
}

// ---- synthetic data --------------------------------------------------------

GD_API gd_status gd_synth(const char * spec_path, uint64_t seed, const char * out_dir) {
    return guarded([&] {
        require_arg(spec_path, "spec_path");
        require_arg(out_dir, "out_dir");
        SyntheticTaskSpec spec = SyntheticTaskSpec::load(spec_path);
        generate_synthetic_corpus(spec, seed, out_dir);
    });
}

// ---- training ----------------------------------------------------------------

GD_API gd_status gd_train(const char * config_path, const char * corpus_path,
                          const char * features_dir, const char * out_dir,
                          const char * resume_path, int verbose) {
    return guarded([&] {
        require_arg(config_path, "config_path");
        require_arg(corpus_path, "corpus_path");
        require_arg(features_dir, "features_dir");
        require_arg(out_dir, "out_dir");
        TrainConfig config = TrainConfig::load(config_path);
        std::vector<Scanpath> corpus = load_corpus(corpus_path);
        FeatureSource features(features_dir, config.d_t, config.task_seed);
        TrainCallbacks callbacks;
        if (verbose != 0) {
            callbacks.on_log = [](int64_t step, const LossBreakdown & l,
                                  std::optional<double> val_rec) {
                std::fprintf(stderr,
                             "step %lld  vlb=%.6f rec=%.6f val=%.6f prior=%.6f total=%.6f",
                             static_cast<long long>(step), l.vlb, l.rec, l.val, l.prior, l.total);
                if (val_rec) {
                    std::fprintf(stderr, "  val_rec=%.6f", *val_rec);
                }
                std::fprintf(stderr, "\n");
            };
        }
        train(config, corpus, features, out_dir, resume_path != nullptr ? resume_path : "",
              callbacks);
    });
}

// ---- sampling ----------------------------------------------------------------

GD_API gd_status gd_model_load(const char * checkpoint_path, gd_model ** out) {
    return guarded([&] {
        require_arg(checkpoint_path, "checkpoint_path");
        require_arg(out, "out");
        auto model = std::make_unique<gd_model>();
        model->loaded = load_model(checkpoint_path);
        *out = model.release();
    });
}

GD_API void gd_model_free(gd_model * model) {
    delete model;
}

GD_API gd_status gd_sample(const gd_model * model, const char * features_dir,
                           const char * stimulus_id, const char * task, int n, uint64_t seed,
                           int threads, int width_px, int height_px, gd_corpus ** out) {
    return guarded([&] {
        require_arg(model, "model");
        require_arg(features_dir, "features_dir");
        require_arg(stimulus_id, "stimulus_id");
        require_arg(task, "task");
        require_arg(out, "out");
        if (n < 1) {
            throw UsageError("gd_sample: n must be >= 1");
        }
        if (width_px < 1 || height_px < 1) {
            throw UsageError("gd_sample: width_px and height_px must be >= 1");
        }
        const LoadedModel & lm = model->loaded;
        FeatureSource features(features_dir, lm.config.d_t, lm.config.task_seed);
        const VisualFeatureMap & vmap = features.visual(stimulus_id);
        const TaskFeature & tfeat = features.task(task);
        Var cond = lm.model->joint_embed(nullptr, vmap, tfeat);

        if (threads <= 0) {
            threads = static_cast<int>(std::thread::hardware_concurrency());
            threads = std::max(threads, 1);
        }
        SampleOptions opts;
        opts.validity_threshold = lm.config.validity_threshold;
        std::vector<Scanpath> paths =
            sample_scanpaths(*lm.model, cond, lm.schedule, seed, n, threads, opts);

        auto corpus = std::make_unique<gd_corpus>();
        for (size_t i = 0; i < paths.size(); ++i) {
            Scanpath & s = paths[i];
            s.stimulus_id = stimulus_id;
            s.task = task;
            s.subject_id = "gen:" + std::to_string(seed) + ":" + std::to_string(i);
            s.width_px = width_px;
            s.height_px = height_px;
            corpus->records.push_back(std::move(s));
        }
        *out = corpus.release();
    });
}

// ---- evaluation ---------------------------------------------------------------

GD_API gd_status gd_eval(const gd_corpus * generated, const gd_corpus * human,
                         const char * segmap_dir, const char * options_json, gd_report ** out) {
    return guarded([&] {
        require_arg(generated, "generated");
        require_arg(human, "human");
        require_arg(out, "out");
        EvalOptions opts;
        if (options_json != nullptr && options_json[0] != '\0') {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(options_json);
            } catch (const std::exception & e) {
                throw ConfigError(std::string("invalid evaluation options JSON: ") + e.what());
            }
            opts = EvalOptions::from_json(j);
        }
        SegmapLookup lookup;
        if (segmap_dir != nullptr && segmap_dir[0] != '\0') {
            lookup = segmap_directory_lookup(segmap_dir);
        }
        auto report = std::make_unique<gd_report>();
        report->json = evaluate_corpora(generated->records, human->records, lookup, opts);
        report->serialized = report->json.dump(2) + "\n";
        *out = report.release();
    });
}

GD_API gd_status gd_report_save(const gd_report * report, const char * path) {
    return guarded([&] {
        require_arg(report, "report");
        require_arg(path, "path");
        std::ofstream os(path, std::ios::binary);
        if (!os) {
            throw FormatError(std::string("cannot open report for writing: ") + path);
        }
        os << report->serialized;
        if (!os) {
            throw FormatError(std::string("failed writing report: ") + path);
        }
    });
}

GD_API const char * gd_report_json(const gd_report * report) {
    return report == nullptr ? "" : report->serialized.c_str();
}

GD_API void gd_report_free(gd_report * report) {
    delete report;
}

// ---- numerics oracle -----------------------------------------------------------

GD_API gd_status gd_gradcheck(uint64_t seeds, int verbose, double * out_max_rel_err) {
    gd_status st = guarded([&] {
        if (seeds == 0) {
            throw UsageError("gd_gradcheck: seeds must be >= 1");
        }
        GradCheckReport rep = run_gradcheck(seeds, verbose != 0 ? &std::cerr : nullptr);
        if (out_max_rel_err != nullptr) {
            *out_max_rel_err = rep.max_rel_err;
        }
        if (verbose != 0) {
            std::fprintf(stderr, "gradcheck: %lld checks, max relative error %.3e (bound %.0e)\n",
                         static_cast<long long>(rep.checks), rep.max_rel_err, kGradCheckTolerance);
        }
        if (!rep.pass) {
            throw NumericalError("gradient check failed: max relative error " +
                                 std::to_string(rep.max_rel_err));
        }
    });
    return st;
}

} // extern "C"
