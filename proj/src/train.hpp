#pragma once

#include "checkpoint.hpp"
#include "diffusion.hpp"
#include "features.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "scanpath.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gazediff {

struct TrainConfig {
    int batch_size = 128;
    double lr = 1e-4;
    double weight_decay = 1e-2;
    int T = 1000;
    int max_len = 16;
    int layers = 6;
    int heads = 8;
    int model_dim = 512;
    uint64_t seed = 0;
    int64_t max_steps = 10000;
    int64_t eval_every = 500;
    bool use_prior_loss = true;

    // optional keys with defaults
    int ffn_mult = 4;
    double dropout = 0.1;
    int d_t = 512;
    uint64_t task_seed = 0;
    double clip_norm = 0.0; // 0 disables clipping
    double validity_threshold = 0.5;
    double schedule_s = 1e-4;
    double schedule_eps = 1e-5;
    bool use_cross_attention = true;
    double val_fraction = 0.0;

    static TrainConfig reference();
    static TrainConfig toy();

    // Strict parser: unknown keys are a hard error.
    static TrainConfig from_json(const nlohmann::json & j);
    static TrainConfig load(const std::string & path);
    nlohmann::ordered_json to_json() const;

    DenoiserConfig denoiser_config() const;
    void validate() const;
};

struct TrainCallbacks {
    // step (1-based), breakdown, optional held-out L_rec
    std::function<void(int64_t, const LossBreakdown &, std::optional<double>)> on_log;
};

struct TrainOutcome {
    std::string checkpoint_path;
    LossBreakdown last_loss;
    int64_t steps_run = 0;
};

// Runs the optimization loop: sample batch -> losses -> backward -> AdamW ->
// importance-sampler update, logging every eval_every steps and writing a
// deterministic final checkpoint to <out_dir>/model.sdkp. resume_from
// continues an earlier run bit-exactly.
TrainOutcome train(const TrainConfig & config, const std::vector<Scanpath> & corpus,
                   FeatureSource & features, const std::string & out_dir,
                   const std::string & resume_from = "", const TrainCallbacks & callbacks = {});

// Trained model bundle reconstructed from a checkpoint.
struct LoadedModel {
    TrainConfig config;
    int d_v = 0;
    ParamStore params;
    std::unique_ptr<Denoiser> model;
    NoiseSchedule schedule;
    int64_t step = 0;

    LoadedModel() = default;
    LoadedModel(LoadedModel &&) = default;
    LoadedModel & operator=(LoadedModel &&) = default;
};

LoadedModel load_model(const std::string & checkpoint_path);

// ---------------------------------------------------------------------------
// synthetic corpora

// Desk-scale dataset generator. Each task maps to one or more mode-center
// sequences; observers are assigned to sequences round-robin and emit
// jittered fixations walking their sequence. Stimulus images render the mode
// layout so the toy-encoded features are informative.
struct SyntheticTaskSpec {
    int stimuli = 1;
    int width_px = 512;
    int height_px = 512;
    int observers = 8;
    double jitter = 0.02;
    int length_min = 3;
    int length_max = 8;
    double duration_mean = 0.25;
    double duration_std = 0.05;
    int image_size = 64;
    int patch = 16;
    int d_v = 16;
    double seg_radius = 0.08;
    // task -> list of mode sequences, each a list of (x, y) centers
    std::vector<std::pair<std::string, std::vector<std::vector<std::pair<double, double>>>>> tasks;

    static SyntheticTaskSpec from_json(const nlohmann::json & j);
    static SyntheticTaskSpec load(const std::string & path);
    void validate() const;
};

struct SyntheticCorpus {
    std::vector<Scanpath> records;
    std::vector<std::string> stimulus_ids;
};

// Writes corpus.jsonl plus features/<id>.sdft and segmaps/<id>.sdsg under
// out_dir (directories created); returns the records.
SyntheticCorpus generate_synthetic_corpus(const SyntheticTaskSpec & spec, uint64_t seed,
                                          const std::string & out_dir);

} // namespace gazediff
