#include "train.hpp"

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace gazediff {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// config

TrainConfig TrainConfig::reference() {
    return TrainConfig{};
}

TrainConfig TrainConfig::toy() {
    TrainConfig c;
    c.batch_size = 16;
    c.lr = 1e-3;
    c.weight_decay = 0.0;
    c.T = 100;
    c.max_len = 8;
    c.layers = 2;
    c.heads = 4;
    c.model_dim = 32;
    c.max_steps = 5000;
    c.eval_every = 500;
    c.dropout = 0.0;
    c.d_t = 16;
    return c;
}

void TrainConfig::validate() const {
    if (batch_size < 1 || max_steps < 1 || eval_every < 1) {
        throw ConfigError("train config: batch_size, max_steps and eval_every must be >= 1");
    }
    if (!(lr > 0.0) || weight_decay < 0.0) {
        throw ConfigError("train config: lr must be > 0 and weight_decay >= 0");
    }
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw ConfigError("train config: val_fraction must be in [0, 1)");
    }
    if (!(validity_threshold > 0.0 && validity_threshold < 1.0)) {
        throw ConfigError("train config: validity_threshold must be in (0, 1)");
    }
    denoiser_config().validate();
}

DenoiserConfig TrainConfig::denoiser_config() const {
    DenoiserConfig d;
    d.layers = layers;
    d.heads = heads;
    d.model_dim = model_dim;
    d.ffn_mult = ffn_mult;
    d.max_len = max_len;
    d.timesteps = T;
    d.d_t = d_t;
    d.dropout = dropout;
    d.use_cross_attention = use_cross_attention;
    return d;
}

namespace {

struct FieldSpec {
    const char * name;
    bool required;
};

constexpr FieldSpec kFields[] = {
    {"batch_size", true},   {"lr", true},
    {"weight_decay", true}, {"T", true},
    {"max_len", true},      {"layers", true},
    {"heads", true},        {"model_dim", true},
    {"seed", true},         {"max_steps", true},
    {"eval_every", true},   {"use_prior_loss", true},
    {"ffn_mult", false},    {"dropout", false},
    {"d_t", false},         {"task_seed", false},
    {"clip_norm", false},   {"validity_threshold", false},
    {"schedule_s", false},  {"schedule_eps", false},
    {"use_cross_attention", false},
    {"val_fraction", false},
};

} // namespace

TrainConfig TrainConfig::from_json(const json & j) {
    if (!j.is_object()) {
        throw ConfigError("train config must be a JSON object");
    }
    // unknown keys are a hard error (config drift protection)
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const FieldSpec & f : kFields) {
            if (it.key() == f.name) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown train config key: " + it.key());
        }
    }
    for (const FieldSpec & f : kFields) {
        if (f.required && !j.contains(f.name)) {
            throw ConfigError(std::string("train config missing required key: ") + f.name);
        }
    }
    TrainConfig c;
    try {
        c.batch_size = j.at("batch_size").get<int>();
        c.lr = j.at("lr").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.T = j.at("T").get<int>();
        c.max_len = j.at("max_len").get<int>();
        c.layers = j.at("layers").get<int>();
        c.heads = j.at("heads").get<int>();
        c.model_dim = j.at("model_dim").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
        c.max_steps = j.at("max_steps").get<int64_t>();
        c.eval_every = j.at("eval_every").get<int64_t>();
        c.use_prior_loss = j.at("use_prior_loss").get<bool>();
        if (j.contains("ffn_mult")) c.ffn_mult = j.at("ffn_mult").get<int>();
        if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
        if (j.contains("d_t")) c.d_t = j.at("d_t").get<int>();
        if (j.contains("task_seed")) c.task_seed = j.at("task_seed").get<uint64_t>();
        if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<double>();
        if (j.contains("validity_threshold"))
            c.validity_threshold = j.at("validity_threshold").get<double>();
        if (j.contains("schedule_s")) c.schedule_s = j.at("schedule_s").get<double>();
        if (j.contains("schedule_eps")) c.schedule_eps = j.at("schedule_eps").get<double>();
        if (j.contains("use_cross_attention"))
            c.use_cross_attention = j.at("use_cross_attention").get<bool>();
        if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction").get<double>();
    } catch (const json::exception & e) {
        throw ConfigError(std::string("train config type error: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::string & path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot open train config: " + path);
    }
    json j;
    try {
        is >> j;
    } catch (const std::exception & e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

ordered_json TrainConfig::to_json() const {
    ordered_json j;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["T"] = T;
    j["max_len"] = max_len;
    j["layers"] = layers;
    j["heads"] = heads;
    j["model_dim"] = model_dim;
    j["seed"] = seed;
    j["max_steps"] = max_steps;
    j["eval_every"] = eval_every;
    j["use_prior_loss"] = use_prior_loss;
    j["ffn_mult"] = ffn_mult;
    j["dropout"] = dropout;
    j["d_t"] = d_t;
    j["task_seed"] = task_seed;
    j["clip_norm"] = clip_norm;
    j["validity_threshold"] = validity_threshold;
    j["schedule_s"] = schedule_s;
    j["schedule_eps"] = schedule_eps;
    j["use_cross_attention"] = use_cross_attention;
    j["val_fraction"] = val_fraction;
    return j;
}

// ---------------------------------------------------------------------------
// checkpoint plumbing

namespace {

void config_into_checkpoint(const TrainConfig & c, int d_v, int64_t step, Checkpoint & ckpt) {
    ordered_json j = c.to_json();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it->is_boolean()) {
            ckpt.config[it.key()] = it->get<bool>() ? "1" : "0";
        } else if (it->is_number_float()) {
            ckpt.set_double(it.key(), it->get<double>());
        } else {
            ckpt.config[it.key()] = it->dump();
        }
    }
    ckpt.config["arch"] = "gaze-denoiser-v1";
    ckpt.set_int("d_v", d_v);
    ckpt.set_int("step", step);
}

TrainConfig config_from_checkpoint(const Checkpoint & ckpt) {
    json j;
    j["batch_size"] = static_cast<int>(ckpt.get_int("batch_size"));
    j["lr"] = ckpt.get_double("lr");
    j["weight_decay"] = ckpt.get_double("weight_decay");
    j["T"] = static_cast<int>(ckpt.get_int("T"));
    j["max_len"] = static_cast<int>(ckpt.get_int("max_len"));
    j["layers"] = static_cast<int>(ckpt.get_int("layers"));
    j["heads"] = static_cast<int>(ckpt.get_int("heads"));
    j["model_dim"] = static_cast<int>(ckpt.get_int("model_dim"));
    j["seed"] = static_cast<uint64_t>(std::stoull(ckpt.get("seed")));
    j["max_steps"] = ckpt.get_int("max_steps");
    j["eval_every"] = ckpt.get_int("eval_every");
    j["use_prior_loss"] = ckpt.get("use_prior_loss") == "1";
    j["ffn_mult"] = static_cast<int>(ckpt.get_int("ffn_mult"));
    j["dropout"] = ckpt.get_double("dropout");
    j["d_t"] = static_cast<int>(ckpt.get_int("d_t"));
    j["task_seed"] = static_cast<uint64_t>(std::stoull(ckpt.get("task_seed")));
    j["clip_norm"] = ckpt.get_double("clip_norm");
    j["validity_threshold"] = ckpt.get_double("validity_threshold");
    j["schedule_s"] = ckpt.get_double("schedule_s");
    j["schedule_eps"] = ckpt.get_double("schedule_eps");
    j["use_cross_attention"] = ckpt.get("use_cross_attention") == "1";
    j["val_fraction"] = ckpt.get_double("val_fraction");
    return TrainConfig::from_json(j);
}

Checkpoint build_checkpoint(const TrainConfig & cfg, int d_v, int64_t step,
                            const ParamStore & params, const TimestepSampler & sampler) {
    Checkpoint ckpt;
    config_into_checkpoint(cfg, d_v, step, ckpt);
    for (const auto & p : params.all()) {
        ckpt.tensors.emplace_back(p->name, p->value);
    }
    for (const auto & p : params.all()) {
        ckpt.tensors.emplace_back(p->name + ".adam_m", p->m);
        ckpt.tensors.emplace_back(p->name + ".adam_v", p->v);
    }
    ckpt.tensors.emplace_back("sampler.history", sampler.history_tensor());
    ckpt.tensors.emplace_back("sampler.state", sampler.state_tensor());
    return ckpt;
}

bool is_aux_tensor(const std::string & name) {
    auto ends_with = [&](const char * suffix) {
        std::string s(suffix);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return ends_with(".adam_m") || ends_with(".adam_v") || name.rfind("sampler.", 0) == 0;
}

void restore_params(const Checkpoint & ckpt, ParamStore & params) {
    for (const auto & [name, t] : ckpt.tensors) {
        if (!is_aux_tensor(name)) {
            params.create(name, t);
        }
    }
    for (const auto & [name, t] : ckpt.tensors) {
        if (name.size() > 7 && name.compare(name.size() - 7, 7, ".adam_m") == 0) {
            Parameter * p = params.find(name.substr(0, name.size() - 7));
            if (p == nullptr) {
                throw FormatError("orphan optimizer moment in checkpoint: " + name);
            }
            require_shape(t, p->value.shape, name.c_str());
            p->m = t;
        } else if (name.size() > 7 && name.compare(name.size() - 7, 7, ".adam_v") == 0) {
            Parameter * p = params.find(name.substr(0, name.size() - 7));
            if (p == nullptr) {
                throw FormatError("orphan optimizer moment in checkpoint: " + name);
            }
            require_shape(t, p->value.shape, name.c_str());
            p->v = t;
        }
    }
}

} // namespace

LoadedModel load_model(const std::string & checkpoint_path) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (!ckpt.has("arch") || ckpt.get("arch") != "gaze-denoiser-v1") {
        throw FormatError("checkpoint does not hold a gaze-denoiser model: " + checkpoint_path);
    }
    LoadedModel m;
    m.config = config_from_checkpoint(ckpt);
    m.d_v = static_cast<int>(ckpt.get_int("d_v"));
    m.step = ckpt.get_int("step");
    restore_params(ckpt, m.params);
    m.model = std::make_unique<Denoiser>(m.config.denoiser_config(), m.d_v, m.params);
    m.schedule =
        NoiseSchedule::sqrt_schedule(m.config.T, m.config.schedule_s, m.config.schedule_eps);
    return m;
}

// ---------------------------------------------------------------------------
// training loop

namespace {

double held_out_rec_loss(const Denoiser & model, const NoiseSchedule & schedule,
                         const std::vector<const PaddedScanpath *> & items,
                         const std::vector<Var> & conds, uint64_t seed) {
    // fixed mid-schedule timestep and per-item noise keep the metric
    // comparable across logging points
    const int t = std::max(1, schedule.timesteps / 2);
    double sum = 0.0;
    for (size_t i = 0; i < items.size(); ++i) {
        Rng rng = Rng(seed, rng_stream::kVal).split(static_cast<uint64_t>(i));
        Var z0 = model.embed_scanpath(nullptr, items[i]->matrix);
        Tensor noise = Tensor::zeros(z0.value().shape);
        for (double & v : noise.data) {
            v = rng.next_gaussian();
        }
        Tensor z_t = q_sample(z0.value(), t, noise, schedule);
        Var pred = model.forward(nullptr, Var(z_t), t, conds[i]);
        auto [recon, probs] = model.reconstruct(nullptr, pred);
        sum += scalar_value(reconstruction_term(recon, items[i]->matrix, items[i]->validity));
    }
    return sum / static_cast<double>(items.size());
}

} // namespace

TrainOutcome train(const TrainConfig & config, const std::vector<Scanpath> & corpus,
                   FeatureSource & features, const std::string & out_dir,
                   const std::string & resume_from, const TrainCallbacks & callbacks) {
    config.validate();
    if (corpus.empty()) {
        throw EmptyBatch("train: corpus is empty");
    }
    if (features.d_t() != config.d_t || features.task_seed() != config.task_seed) {
        throw ConfigError("train: feature source d_t/task_seed does not match the config");
    }
    std::filesystem::create_directories(out_dir);

    // resolve every feature up front so missing files fail before any work
    std::map<std::pair<std::string, std::string>, size_t> cond_index;
    std::vector<std::pair<const VisualFeatureMap *, const TaskFeature *>> cond_inputs;
    for (const Scanpath & s : corpus) {
        auto key = std::make_pair(s.stimulus_id, s.task);
        if (cond_index.count(key) == 0) {
            const VisualFeatureMap & vm = features.visual(s.stimulus_id);
            const TaskFeature & tf = features.task(s.task);
            cond_index[key] = cond_inputs.size();
            cond_inputs.emplace_back(&vm, &tf);
        }
    }
    const int d_v = cond_inputs.front().first->dim;

    NoiseSchedule schedule =
        NoiseSchedule::sqrt_schedule(config.T, config.schedule_s, config.schedule_eps);
    TimestepSampler sampler(config.T);

    ParamStore params;
    std::unique_ptr<Denoiser> model;
    int64_t start_step = 0;

    if (!resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_from);
        TrainConfig stored = config_from_checkpoint(ckpt);
        ordered_json a = stored.to_json();
        ordered_json b = config.to_json();
        a.erase("max_steps");
        b.erase("max_steps"); // resuming may extend the budget
        if (a != b) {
            throw ConfigError("resume: config does not match the checkpoint at " + resume_from);
        }
        if (static_cast<int>(ckpt.get_int("d_v")) != d_v) {
            throw ConfigError("resume: feature width changed since the checkpoint");
        }
        restore_params(ckpt, params);
        model = std::make_unique<Denoiser>(config.denoiser_config(), d_v, params);
        const Tensor * hist = ckpt.tensor("sampler.history");
        const Tensor * state = ckpt.tensor("sampler.state");
        if (hist == nullptr || state == nullptr) {
            throw FormatError("resume: checkpoint lacks sampler state");
        }
        sampler.restore(*hist, *state);
        start_step = ckpt.get_int("step");
    } else {
        model = std::make_unique<Denoiser>(config.denoiser_config(), d_v, params, config.seed);
        params.round_to_f32();
    }

    // train / held-out split
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng split_rng(config.seed, rng_stream::kVal);
    for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<size_t>(split_rng.next_below(i))]);
    }
    size_t n_val = static_cast<size_t>(std::floor(config.val_fraction * corpus.size()));
    if (n_val >= corpus.size()) {
        n_val = corpus.size() - 1;
    }
    std::vector<size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    std::vector<size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());

    std::vector<PaddedScanpath> padded;
    padded.reserve(corpus.size());
    for (const Scanpath & s : corpus) {
        padded.push_back(pad_truncate(s, config.max_len));
    }

    std::vector<const PaddedScanpath *> val_items;
    std::vector<Var> val_conds;
    for (size_t i : val_idx) {
        val_items.push_back(&padded[i]);
        auto key = std::make_pair(corpus[i].stimulus_id, corpus[i].task);
        const auto & [vm, tf] = cond_inputs[cond_index[key]];
        val_conds.push_back(model->joint_embed(nullptr, *vm, *tf));
    }

    TrainOutcome outcome;
    outcome.steps_run = 0;
    const bool drop_enabled = config.dropout > 0.0;

    for (int64_t step = start_step + 1; step <= config.max_steps; ++step) {
        Rng batch_rng = Rng(config.seed, rng_stream::kBatch).split(static_cast<uint64_t>(step));
        Rng t_rng = Rng(config.seed, rng_stream::kTimestep).split(static_cast<uint64_t>(step));
        Rng noise_rng = Rng(config.seed, rng_stream::kNoise).split(static_cast<uint64_t>(step));
        Rng drop_rng = Rng(config.seed, rng_stream::kDropout).split(static_cast<uint64_t>(step));

        Tape tape;
        // one conditioning subgraph per distinct (stimulus, task) in the batch
        std::map<size_t, Var> cond_vars;
        std::vector<size_t> batch_items;
        for (int b = 0; b < config.batch_size; ++b) {
            size_t idx = train_idx[static_cast<size_t>(batch_rng.next_below(train_idx.size()))];
            batch_items.push_back(idx);
        }

        std::vector<DropoutMasks> masks;
        if (drop_enabled) {
            masks.reserve(batch_items.size());
        }
        std::vector<TrainItem> batch;
        batch.reserve(batch_items.size());
        for (size_t idx : batch_items) {
            auto key = std::make_pair(corpus[idx].stimulus_id, corpus[idx].task);
            size_t ci = cond_index[key];
            auto found = cond_vars.find(ci);
            if (found == cond_vars.end()) {
                const auto & [vm, tf] = cond_inputs[ci];
                found = cond_vars.emplace(ci, model->joint_embed(&tape, *vm, *tf)).first;
            }
            TrainItem item;
            item.padded = padded[idx];
            item.cond = found->second;
            if (drop_enabled) {
                masks.push_back(DropoutMasks::draw(model->config(), drop_rng));
                item.masks = &masks.back();
            }
            batch.push_back(std::move(item));
        }

        LossResult loss =
            compute_losses(batch, *model, schedule, sampler, tape, t_rng, noise_rng,
                           config.use_prior_loss);
        if (!std::isfinite(loss.values.total)) {
            throw NumericalError("train: non-finite loss at step " + std::to_string(step));
        }

        params.zero_grads();
        tape.backward(loss.total);
        if (config.clip_norm > 0.0) {
            clip_grad_norm(params, config.clip_norm);
        }
        AdamWConfig opt;
        opt.lr = config.lr;
        opt.weight_decay = config.weight_decay;
        adamw_step(params, opt, step);
        params.round_to_f32();

        for (const auto & [t, l] : loss.vlb_samples) {
            sampler.record(t, l);
        }

        outcome.last_loss = loss.values;
        outcome.steps_run += 1;

        if (callbacks.on_log && (step % config.eval_every == 0 || step == config.max_steps)) {
            std::optional<double> val_rec;
            if (!val_items.empty()) {
                val_rec = held_out_rec_loss(*model, schedule, val_items, val_conds, config.seed);
            }
            callbacks.on_log(step, loss.values, val_rec);
        }
    }

    Checkpoint ckpt = build_checkpoint(config, d_v, std::max(start_step, config.max_steps), params,
                                       sampler);
    std::filesystem::path out = std::filesystem::path(out_dir) / "model.sdkp";
    save_checkpoint(out.string(), ckpt);
    outcome.checkpoint_path = out.string();
    return outcome;
}

// ---------------------------------------------------------------------------
// synthetic corpus

void SyntheticTaskSpec::validate() const {
    if (stimuli < 1 || observers < 1) {
        throw ConfigError("synthetic spec: stimuli and observers must be >= 1");
    }
    if (width_px < 1 || height_px < 1 || image_size < 1 || patch < 1 || d_v < 1) {
        throw ConfigError("synthetic spec: dimensions must be positive");
    }
    if (length_min < 1 || length_max < length_min) {
        throw ConfigError("synthetic spec: need 1 <= length_min <= length_max");
    }
    if (jitter < 0.0 || duration_std < 0.0 || !(duration_mean > 0.0)) {
        throw ConfigError("synthetic spec: jitter/duration parameters out of range");
    }
    if (tasks.empty()) {
        throw ConfigError("synthetic spec: at least one task required");
    }
    for (const auto & [name, seqs] : tasks) {
        if (seqs.empty()) {
            throw ConfigError("synthetic spec: task '" + name + "' has no mode sequence");
        }
        for (const auto & seq : seqs) {
            if (seq.empty()) {
                throw ConfigError("synthetic spec: empty mode sequence in task '" + name + "'");
            }
            for (const auto & [x, y] : seq) {
                if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) {
                    throw ConfigError("synthetic spec: mode centers must lie in [0,1]^2");
                }
            }
        }
    }
}

SyntheticTaskSpec SyntheticTaskSpec::from_json(const json & j) {
    SyntheticTaskSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string & k = it.key();
        if (k == "stimuli") {
            s.stimuli = it->get<int>();
        } else if (k == "width_px") {
            s.width_px = it->get<int>();
        } else if (k == "height_px") {
            s.height_px = it->get<int>();
        } else if (k == "observers") {
            s.observers = it->get<int>();
        } else if (k == "jitter") {
            s.jitter = it->get<double>();
        } else if (k == "length_min") {
            s.length_min = it->get<int>();
        } else if (k == "length_max") {
            s.length_max = it->get<int>();
        } else if (k == "duration_mean") {
            s.duration_mean = it->get<double>();
        } else if (k == "duration_std") {
            s.duration_std = it->get<double>();
        } else if (k == "image_size") {
            s.image_size = it->get<int>();
        } else if (k == "patch") {
            s.patch = it->get<int>();
        } else if (k == "d_v") {
            s.d_v = it->get<int>();
        } else if (k == "seg_radius") {
            s.seg_radius = it->get<double>();
        } else if (k == "tasks") {
            for (auto task_it = it->begin(); task_it != it->end(); ++task_it) {
                std::vector<std::vector<std::pair<double, double>>> seqs;
                const json & v = task_it.value();
                if (!v.is_array() || v.empty()) {
                    throw ConfigError("synthetic spec: task value must be a nonempty array");
                }
                auto parse_seq = [](const json & arr) {
                    std::vector<std::pair<double, double>> seq;
                    for (const auto & c : arr) {
                        seq.emplace_back(c.at(0).get<double>(), c.at(1).get<double>());
                    }
                    return seq;
                };
                if (v[0].is_array() && !v[0].empty() && v[0][0].is_number()) {
                    seqs.push_back(parse_seq(v)); // single sequence of [x, y] pairs
                } else {
                    for (const auto & sub : v) {
                        seqs.push_back(parse_seq(sub));
                    }
                }
                s.tasks.emplace_back(task_it.key(), std::move(seqs));
            }
        } else {
            throw ConfigError("unknown synthetic spec key: " + k);
        }
    }
    s.validate();
    return s;
}

SyntheticTaskSpec SyntheticTaskSpec::load(const std::string & path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot open synthetic spec: " + path);
    }
    json j;
    try {
        is >> j;
    } catch (const std::exception & e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticTaskSpec & spec, uint64_t seed,
                                          const std::string & out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "features");
    fs::create_directories(fs::path(out_dir) / "segmaps");

    Rng root(seed, rng_stream::kSynth);
    SyntheticCorpus corpus;

    for (int k = 0; k < spec.stimuli; ++k) {
        std::string sid = "stim" + std::string(k < 10 ? "00" : (k < 100 ? "0" : "")) +
                          std::to_string(k);
        corpus.stimulus_ids.push_back(sid);

        // per-stimulus layout: the base mode centers shifted by a seeded
        // offset so different stimuli carry distinguishable features
        Rng stim_rng = root.split(0x5000 + static_cast<uint64_t>(k));
        auto layout = spec.tasks;
        if (k > 0) {
            for (auto & [name, seqs] : layout) {
                for (auto & seq : seqs) {
                    for (auto & [x, y] : seq) {
                        x = std::clamp(x + (stim_rng.next_double() - 0.5) * 0.2, 0.02, 0.98);
                        y = std::clamp(y + (stim_rng.next_double() - 0.5) * 0.2, 0.02, 0.98);
                    }
                }
            }
        }

        // collect every mode center once for the image and the segmentation
        std::vector<std::pair<double, double>> all_centers;
        for (const auto & [name, seqs] : layout) {
            for (const auto & seq : seqs) {
                for (const auto & c : seq) {
                    all_centers.push_back(c);
                }
            }
        }

        // stimulus image: one gaussian bump per mode center
        Tensor image = Tensor::zeros({spec.image_size, spec.image_size});
        const double sigma = 0.06;
        for (size_t ci = 0; ci < all_centers.size(); ++ci) {
            const double amp = 0.5 + 0.5 * static_cast<double>(ci + 1) /
                                         static_cast<double>(all_centers.size());
            for (int r = 0; r < spec.image_size; ++r) {
                for (int c = 0; c < spec.image_size; ++c) {
                    double px = (c + 0.5) / spec.image_size;
                    double py = (r + 0.5) / spec.image_size;
                    double d2 = (px - all_centers[ci].first) * (px - all_centers[ci].first) +
                                (py - all_centers[ci].second) * (py - all_centers[ci].second);
                    image.at(r, c) += amp * std::exp(-d2 / (2.0 * sigma * sigma));
                }
            }
        }
        VisualFeatureMap vm = toy_encode(image, spec.patch, spec.d_v, seed);
        save_feature_file((fs::path(out_dir) / "features" / (sid + ".sdft")).string(), vm.grid);

        // segmentation: nearest mode center within the radius, else background
        SegmentationMap seg;
        seg.width = spec.image_size;
        seg.height = spec.image_size;
        seg.labels.assign(static_cast<size_t>(spec.image_size) * spec.image_size, 0);
        for (int r = 0; r < spec.image_size; ++r) {
            for (int c = 0; c < spec.image_size; ++c) {
                double px = (c + 0.5) / spec.image_size;
                double py = (r + 0.5) / spec.image_size;
                double best = spec.seg_radius;
                int label = 0;
                for (size_t ci = 0; ci < all_centers.size(); ++ci) {
                    double d = std::hypot(px - all_centers[ci].first, py - all_centers[ci].second);
                    if (d <= best) {
                        best = d;
                        label = static_cast<int>(ci) + 1;
                    }
                }
                seg.labels[static_cast<size_t>(r) * spec.image_size + static_cast<size_t>(c)] =
                    static_cast<uint16_t>(label);
            }
        }
        save_segmentation((fs::path(out_dir) / "segmaps" / (sid + ".sdsg")).string(), seg);

        // observers walk their assigned mode sequence with jitter
        for (size_t ti = 0; ti < layout.size(); ++ti) {
            const auto & [task_name, seqs] = layout[ti];
            for (int o = 0; o < spec.observers; ++o) {
                Rng obs_rng = root.split((static_cast<uint64_t>(k) << 32) ^
                                         (static_cast<uint64_t>(ti) << 16) ^
                                         static_cast<uint64_t>(o));
                const auto & seq = seqs[static_cast<size_t>(o) % seqs.size()];
                int len = spec.length_min +
                          static_cast<int>(obs_rng.next_below(
                              static_cast<uint64_t>(spec.length_max - spec.length_min + 1)));
                Scanpath s;
                s.stimulus_id = sid;
                s.task = task_name;
                s.subject_id = "subj" + std::to_string(o);
                s.width_px = spec.width_px;
                s.height_px = spec.height_px;
                for (int i = 0; i < len; ++i) {
                    const auto & c = seq[static_cast<size_t>(i) % seq.size()];
                    Fixation f;
                    f.x = std::clamp(c.first + obs_rng.next_gaussian() * spec.jitter, 0.0, 1.0);
                    f.y = std::clamp(c.second + obs_rng.next_gaussian() * spec.jitter, 0.0, 1.0);
                    f.duration = std::max(
                        0.01, spec.duration_mean + obs_rng.next_gaussian() * spec.duration_std);
                    s.fixations.push_back(f);
                }
                corpus.records.push_back(std::move(s));
            }
        }
    }

    save_corpus((fs::path(out_dir) / "corpus.jsonl").string(), corpus.records);
    return corpus;
}

} // namespace gazediff
