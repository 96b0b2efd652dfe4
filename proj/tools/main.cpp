// gazediff command line tool. Everything goes through the C API in
// gazediff.h; exit codes follow gd_status (0 ok, 1 usage, 2 data, 3 numeric).

#include "gazediff.h"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <string>
#include <thread>

namespace {

int finish(gd_status st, const char * what) {
    if (st != GD_OK) {
        std::fprintf(stderr, "gazediff %s: error: %s\n", what, gd_last_error());
    }
    return static_cast<int>(st);
}

struct CorpusGuard {
    gd_corpus * ptr = nullptr;
    ~CorpusGuard() { gd_corpus_free(ptr); }
};

struct ModelGuard {
    gd_model * ptr = nullptr;
    ~ModelGuard() { gd_model_free(ptr); }
};

struct ReportGuard {
    gd_report * ptr = nullptr;
    ~ReportGuard() { gd_report_free(ptr); }
};

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"diffusion-based gaze scanpath generation and evaluation"};
    app.set_version_flag("--version", std::string("gazediff ") + gd_version());
    app.require_subcommand(1);

    // train
    auto * train_cmd = app.add_subcommand("train", "train a model on a scanpath corpus");
    std::string train_config, train_corpus, train_features, train_out, train_resume;
    bool train_quiet = false;
    train_cmd->add_option("--config", train_config, "training config JSON")->required();
    train_cmd->add_option("--corpus", train_corpus, "JSONL scanpath corpus")->required();
    train_cmd->add_option("--features", train_features, "directory of SDFT feature files")
        ->required();
    train_cmd->add_option("--out", train_out, "output directory for checkpoints")->required();
    train_cmd->add_option("--resume", train_resume, "checkpoint to continue from");
    train_cmd->add_flag("--quiet", train_quiet, "suppress progress logging");

    // sample
    auto * sample_cmd = app.add_subcommand("sample", "generate scanpaths from a trained model");
    std::string sample_ckpt, sample_stimulus, sample_task, sample_out, sample_features;
    int sample_n = 20;
    uint64_t sample_seed = 0;
    int sample_threads = 0;
    int sample_w = 1, sample_h = 1;
    sample_cmd->add_option("--ckpt", sample_ckpt, "model checkpoint (SDKP)")->required();
    sample_cmd->add_option("--features", sample_features, "directory of SDFT feature files")
        ->required();
    sample_cmd->add_option("--stimulus", sample_stimulus, "stimulus identifier")->required();
    sample_cmd->add_option("--task", sample_task, "viewing task text (empty = free viewing)")
        ->default_val("");
    sample_cmd->add_option("--n", sample_n, "number of scanpaths (distinct noise draws)")
        ->default_val(20);
    sample_cmd->add_option("--seed", sample_seed, "master random seed")->default_val(0);
    sample_cmd->add_option("--threads", sample_threads, "sampler threads (0 = auto)")
        ->default_val(0);
    sample_cmd->add_option("--width-px", sample_w, "stimulus width for pixel output")
        ->default_val(1);
    sample_cmd->add_option("--height-px", sample_h, "stimulus height for pixel output")
        ->default_val(1);
    sample_cmd->add_option("--out", sample_out, "output JSONL path")->required();

    // eval
    auto * eval_cmd = app.add_subcommand("eval", "score generated scanpaths against human ones");
    std::string eval_gen, eval_human, eval_segmaps, eval_report, eval_options;
    int eval_threads = 0;
    double eval_rss = -1.0, eval_bandwidth = -1.0;
    eval_cmd->add_option("--gen", eval_gen, "generated corpus (JSONL)")->required();
    eval_cmd->add_option("--human", eval_human, "human corpus (JSONL)")->required();
    eval_cmd->add_option("--segmaps", eval_segmaps, "directory of SDSG segmentation maps");
    eval_cmd->add_option("--report", eval_report, "output report JSON")->required();
    eval_cmd->add_option("--options", eval_options, "evaluation options as a JSON object");
    eval_cmd->add_option("--rss-threshold", eval_rss, "coverage threshold for RSS");
    eval_cmd->add_option("--bandwidth", eval_bandwidth, "mean-shift bandwidth for SS clusters");
    eval_cmd->add_option("--threads", eval_threads, "evaluation threads (0 = auto)");

    // gradcheck
    auto * grad_cmd = app.add_subcommand("gradcheck", "run the finite-difference gradient oracle");
    uint64_t grad_seeds = 100;
    grad_cmd->add_option("--seeds", grad_seeds, "number of random seeds")->default_val(100);

    // synth
    auto * synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus with features");
    std::string synth_spec, synth_out;
    uint64_t synth_seed = 0;
    synth_cmd->add_option("--spec", synth_spec, "synthetic task spec JSON")->required();
    synth_cmd->add_option("--seed", synth_seed, "generator seed")->default_val(0);
    synth_cmd->add_option("--out", synth_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        return app.exit(e) == 0 ? 0 : static_cast<int>(GD_ERR_USAGE);
    }

    if (train_cmd->parsed()) {
        gd_status st = gd_train(train_config.c_str(), train_corpus.c_str(), train_features.c_str(),
                                train_out.c_str(),
                                train_resume.empty() ? nullptr : train_resume.c_str(),
                                train_quiet ? 0 : 1);
        return finish(st, "train");
    }

    if (sample_cmd->parsed()) {
        ModelGuard model;
        gd_status st = gd_model_load(sample_ckpt.c_str(), &model.ptr);
        if (st != GD_OK) {
            return finish(st, "sample");
        }
        CorpusGuard corpus;
        st = gd_sample(model.ptr, sample_features.c_str(), sample_stimulus.c_str(),
                       sample_task.c_str(), sample_n, sample_seed, sample_threads, sample_w,
                       sample_h, &corpus.ptr);
        if (st != GD_OK) {
            return finish(st, "sample");
        }
        st = gd_corpus_save(corpus.ptr, sample_out.c_str());
        return finish(st, "sample");
    }

    if (eval_cmd->parsed()) {
        CorpusGuard gen, human;
        gd_status st = gd_corpus_load(eval_gen.c_str(), &gen.ptr);
        if (st != GD_OK) {
            return finish(st, "eval");
        }
        st = gd_corpus_load(eval_human.c_str(), &human.ptr);
        if (st != GD_OK) {
            return finish(st, "eval");
        }
        // fold the convenience flags into the options object
        nlohmann::json opts;
        if (!eval_options.empty()) {
            try {
                opts = nlohmann::json::parse(eval_options);
            } catch (const std::exception & e) {
                std::fprintf(stderr, "gazediff eval: error: invalid --options JSON: %s\n",
                             e.what());
                return static_cast<int>(GD_ERR_USAGE);
            }
        } else {
            opts = nlohmann::json::object();
        }
        if (eval_rss >= 0.0) {
            opts["rss_threshold"] = eval_rss;
        }
        if (eval_bandwidth >= 0.0) {
            opts["ss_bandwidth"] = eval_bandwidth;
        }
        opts["threads"] = eval_threads > 0
                              ? eval_threads
                              : std::max(1u, std::thread::hardware_concurrency());
        std::string options = opts.dump();
        ReportGuard report;
        st = gd_eval(gen.ptr, human.ptr, eval_segmaps.empty() ? nullptr : eval_segmaps.c_str(),
                     options.c_str(), &report.ptr);
        if (st != GD_OK) {
            return finish(st, "eval");
        }
        st = gd_report_save(report.ptr, eval_report.c_str());
        return finish(st, "eval");
    }

    if (grad_cmd->parsed()) {
        double max_err = 0.0;
        gd_status st = gd_gradcheck(grad_seeds, 1, &max_err);
        if (st == GD_OK) {
            std::printf("gradcheck passed: max relative error %.3e\n", max_err);
        }
        return finish(st, "gradcheck");
    }

    if (synth_cmd->parsed()) {
        gd_status st = gd_synth(synth_spec.c_str(), synth_seed, synth_out.c_str());
        return finish(st, "synth");
    }

    return static_cast<int>(GD_ERR_USAGE);
}
