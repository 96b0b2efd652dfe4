#include "diffusion.hpp"

#include "errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace gazediff {

// ---------------------------------------------------------------------------
// schedule

void NoiseSchedule::validate() const {
    if (timesteps < 1) {
        throw ScheduleError("schedule needs at least one timestep");
    }
    if (static_cast<int>(alpha_bar.size()) != timesteps + 1 ||
        static_cast<int>(beta.size()) != timesteps + 1) {
        throw ScheduleError("schedule table sizes do not match T");
    }
    if (alpha_bar[0] != 1.0) {
        throw ScheduleError("alpha_bar[0] must be 1");
    }
    for (int t = 1; t <= timesteps; ++t) {
        if (!(alpha_bar[t] > 0.0)) {
            throw ScheduleError("alpha_bar must stay positive (t=" + std::to_string(t) + ")");
        }
        if (!(alpha_bar[t] < alpha_bar[t - 1])) {
            throw ScheduleError("alpha_bar must be strictly decreasing (t=" + std::to_string(t) +
                                ")");
        }
        if (!(beta[t] > 0.0 && beta[t] < 1.0)) {
            throw ScheduleError("beta_t out of (0,1) at t=" + std::to_string(t));
        }
    }
}

double NoiseSchedule::posterior_variance(int t) const {
    return (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> ab) {
    NoiseSchedule s;
    s.timesteps = static_cast<int>(ab.size()) - 1;
    s.alpha_bar = std::move(ab);
    s.beta.assign(s.alpha_bar.size(), 0.0);
    for (int t = 1; t <= s.timesteps; ++t) {
        s.beta[t] = 1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1];
    }
    s.validate();
    return s;
}

NoiseSchedule NoiseSchedule::sqrt_schedule(int timesteps, double s, double floor_eps) {
    if (timesteps < 1) {
        throw ScheduleError("sqrt_schedule: T must be >= 1");
    }
    if (!(s > 0.0) || s >= 1.0) {
        throw ScheduleError("sqrt_schedule: offset s must be in (0, 1)");
    }
    std::vector<double> ab(static_cast<size_t>(timesteps) + 1);
    ab[0] = 1.0;
    for (int t = 1; t <= timesteps; ++t) {
        double v = 1.0 - std::sqrt(static_cast<double>(t) / timesteps + s);
        ab[static_cast<size_t>(t)] = std::max(v, floor_eps);
    }
    return from_alpha_bar(std::move(ab)); // strict-decrease check rejects a flat clamped tail
}

Tensor q_sample(const Tensor & z0, int t, const Tensor & noise, const NoiseSchedule & schedule) {
    if (t < 1 || t > schedule.timesteps) {
        throw ScheduleError("q_sample: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(schedule.timesteps) + "]");
    }
    if (!z0.same_shape(noise)) {
        throw ShapeError("q_sample: noise shape must match z0");
    }
    const double ab = schedule.alpha_bar[static_cast<size_t>(t)];
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Tensor out = z0;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = a * z0.data[i] + b * noise.data[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// importance sampler

TimestepSampler::TimestepSampler(int timesteps) : timesteps_(timesteps) {
    if (timesteps < 1) {
        throw ScheduleError("TimestepSampler: T must be >= 1");
    }
    hist_.assign(static_cast<size_t>(timesteps + 1) * kCapacity, 0.0);
    count_.assign(static_cast<size_t>(timesteps + 1), 0);
    pos_.assign(static_cast<size_t>(timesteps + 1), 0);
}

bool TimestepSampler::warmed_up() const {
    for (int t = 1; t <= timesteps_; ++t) {
        if (count_[static_cast<size_t>(t)] < kCapacity) {
            return false;
        }
    }
    return true;
}

void TimestepSampler::record(int t, double vlb_loss) {
    if (t < 1 || t > timesteps_) {
        throw ScheduleError("TimestepSampler::record: t out of range");
    }
    // f32 snap keeps the history identical across a checkpoint round trip
    const double stored = static_cast<double>(static_cast<float>(vlb_loss));
    hist_[static_cast<size_t>(t) * kCapacity + static_cast<size_t>(pos_[static_cast<size_t>(t)])] =
        stored;
    pos_[static_cast<size_t>(t)] = (pos_[static_cast<size_t>(t)] + 1) % kCapacity;
    count_[static_cast<size_t>(t)] = std::min(count_[static_cast<size_t>(t)] + 1, kCapacity);
}

std::vector<double> TimestepSampler::probabilities() const {
    std::vector<double> p(static_cast<size_t>(timesteps_) + 1, 0.0);
    if (!warmed_up()) {
        const double u = 1.0 / timesteps_;
        for (int t = 1; t <= timesteps_; ++t) {
            p[static_cast<size_t>(t)] = u;
        }
        return p;
    }
    const double floor = 1e-3 / timesteps_;
    double sum = 0.0;
    for (int t = 1; t <= timesteps_; ++t) {
        double msq = 0.0;
        for (int k = 0; k < kCapacity; ++k) {
            double v = hist_[static_cast<size_t>(t) * kCapacity + static_cast<size_t>(k)];
            msq += v * v;
        }
        msq /= kCapacity;
        p[static_cast<size_t>(t)] = std::max(std::sqrt(msq), floor);
        sum += p[static_cast<size_t>(t)];
    }
    for (int t = 1; t <= timesteps_; ++t) {
        p[static_cast<size_t>(t)] /= sum;
    }
    return p;
}

std::pair<int, double> TimestepSampler::sample(Rng & rng) const {
    if (!warmed_up()) {
        int t = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(timesteps_)));
        return {t, 1.0};
    }
    std::vector<double> p = probabilities();
    double u = rng.next_double();
    double acc = 0.0;
    for (int t = 1; t <= timesteps_; ++t) {
        acc += p[static_cast<size_t>(t)];
        if (u < acc || t == timesteps_) {
            return {t, 1.0 / (timesteps_ * p[static_cast<size_t>(t)])};
        }
    }
    return {timesteps_, 1.0 / (timesteps_ * p[static_cast<size_t>(timesteps_)])};
}

Tensor TimestepSampler::history_tensor() const {
    Tensor t = Tensor::zeros({timesteps_ + 1, kCapacity});
    t.data = hist_;
    return t;
}

Tensor TimestepSampler::state_tensor() const {
    Tensor t = Tensor::zeros({timesteps_ + 1, 2});
    for (int i = 0; i <= timesteps_; ++i) {
        t.at(i, 0) = count_[static_cast<size_t>(i)];
        t.at(i, 1) = pos_[static_cast<size_t>(i)];
    }
    return t;
}

void TimestepSampler::restore(const Tensor & history, const Tensor & state) {
    require_shape(history, {timesteps_ + 1, kCapacity}, "sampler history");
    require_shape(state, {timesteps_ + 1, 2}, "sampler state");
    hist_ = history.data;
    for (int i = 0; i <= timesteps_; ++i) {
        count_[static_cast<size_t>(i)] = static_cast<int>(state.at(i, 0));
        pos_[static_cast<size_t>(i)] = static_cast<int>(state.at(i, 1));
    }
}

// ---------------------------------------------------------------------------
// loss terms

Var latent_vlb_term(const Var & z0, const Var & z0_pred, double importance_weight) {
    return scale(mean_all(square(sub(z0, z0_pred))), importance_weight);
}

Var reconstruction_term(const Var & recon, const Tensor & target,
                        const std::vector<double> & validity) {
    if (recon.value().rows() != target.rows() || recon.value().cols() != 3 || target.cols() != 3) {
        throw ShapeError("reconstruction_term: expected L x 3 matrices");
    }
    double n_valid = 0.0;
    Tensor mask = Tensor::zeros(recon.value().shape);
    for (int64_t r = 0; r < target.rows(); ++r) {
        if (validity[static_cast<size_t>(r)] > 0.5) {
            n_valid += 1.0;
            for (int64_t c = 0; c < 3; ++c) {
                mask.at(r, c) = 1.0;
            }
        }
    }
    if (n_valid == 0.0) {
        throw EmptyScanpath("reconstruction_term: no valid fixations");
    }
    // mean over valid rows of the per-row L1 sum; padded rows masked out
    Var diff = vabs(sub(recon, Var(target)));
    return scale(sum_all(mul_const(diff, mask)), 1.0 / n_valid);
}

Var validity_term(const Var & probs, const std::vector<double> & validity, double clamp_eps) {
    const int64_t L = probs.value().numel();
    if (static_cast<int64_t>(validity.size()) != L) {
        throw ShapeError("validity_term: probability/mask length mismatch");
    }
    Var p = clamp(probs, clamp_eps, 1.0 - clamp_eps);
    Tensor u = Tensor::zeros(probs.value().shape);
    Tensor one_minus_u = Tensor::zeros(probs.value().shape);
    for (int64_t i = 0; i < L; ++i) {
        u.data[static_cast<size_t>(i)] = validity[static_cast<size_t>(i)];
        one_minus_u.data[static_cast<size_t>(i)] = 1.0 - validity[static_cast<size_t>(i)];
    }
    Var bce = add(mul_const(vlog(p), u), mul_const(vlog(affine(p, -1.0, 1.0)), one_minus_u));
    return scale(mean_all(bce), -1.0);
}

Var prior_term(const Var & z0, double alpha_bar_T) {
    // mean of q(z_T | z_0) is sqrt(abar_T) z_0; penalize its squared norm
    return scale(mean_all(square(z0)), alpha_bar_T);
}

// ---------------------------------------------------------------------------
// training loss

LossResult compute_losses(const std::vector<TrainItem> & batch, const Denoiser & model,
                          const NoiseSchedule & schedule, const TimestepSampler & sampler,
                          Tape & tape, Rng & t_rng, Rng & noise_rng, bool use_prior_loss) {
    if (batch.empty()) {
        throw EmptyBatch("compute_losses: empty batch");
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const double abar_T = schedule.alpha_bar[static_cast<size_t>(schedule.timesteps)];

    LossResult res;
    Var vlb_sum, rec_sum, val_sum, prior_sum;
    bool first = true;
    for (const TrainItem & item : batch) {
        auto [t, weight] = sampler.sample(t_rng);

        Var z0 = model.embed_scanpath(&tape, item.padded.matrix);
        Tensor noise = Tensor::zeros(z0.value().shape);
        for (double & v : noise.data) {
            v = noise_rng.next_gaussian();
        }
        // reparameterized corruption stays on the tape, so the embedding is
        // trained through the denoiser as well as through the direct terms
        const double ab = schedule.alpha_bar[static_cast<size_t>(t)];
        Tensor scaled_noise = noise;
        const double nb = std::sqrt(1.0 - ab);
        for (double & v : scaled_noise.data) {
            v *= nb;
        }
        Var z_t = add(scale(z0, std::sqrt(ab)), Var(std::move(scaled_noise)));

        Var z0_pred = model.forward(&tape, z_t, t, item.cond, item.masks);
        auto [recon, probs] = model.reconstruct(&tape, z0_pred);

        Var vlb = latent_vlb_term(z0, z0_pred, weight);
        Var rec = reconstruction_term(recon, item.padded.matrix, item.padded.validity);
        Var val = validity_term(probs, item.padded.validity);

        res.vlb_samples.emplace_back(t, scalar_value(vlb) / std::max(weight, 1e-300));

        if (first) {
            vlb_sum = vlb;
            rec_sum = rec;
            val_sum = val;
        } else {
            vlb_sum = add(vlb_sum, vlb);
            rec_sum = add(rec_sum, rec);
            val_sum = add(val_sum, val);
        }
        if (use_prior_loss) {
            Var pr = prior_term(z0, abar_T);
            prior_sum = first ? pr : add(prior_sum, pr);
        }
        first = false;
    }

    vlb_sum = scale(vlb_sum, inv_n);
    rec_sum = scale(rec_sum, inv_n);
    val_sum = scale(val_sum, inv_n);
    res.values.vlb = scalar_value(vlb_sum);
    res.values.rec = scalar_value(rec_sum);
    res.values.val = scalar_value(val_sum);
    Var total = add(add(vlb_sum, rec_sum), val_sum);
    if (use_prior_loss) {
        prior_sum = scale(prior_sum, inv_n);
        res.values.prior = scalar_value(prior_sum);
        total = add(total, prior_sum);
    }
    res.values.total = scalar_value(total);
    res.total = total;
    return res;
}

// ---------------------------------------------------------------------------
// reverse sampling

Scanpath sample_scanpath(const Denoiser & model, const Var & cond, const NoiseSchedule & schedule,
                         Rng & rng, const SampleOptions & opts) {
    const DenoiserConfig & cfg = model.config();
    if (schedule.timesteps != cfg.timesteps) {
        throw ScheduleError("sample_scanpath: schedule length does not match the model");
    }
    Tensor z = Tensor::zeros({cfg.max_len, cfg.model_dim});
    for (double & v : z.data) {
        v = rng.next_gaussian();
    }

    for (int t = schedule.timesteps; t >= 1; --t) {
        Var pred = model.forward(nullptr, Var(z), t, cond);
        const Tensor & z0_hat = pred.value();
        if (!z0_hat.all_finite()) {
            throw NumericalError("sample_scanpath: non-finite prediction at t=" +
                                 std::to_string(t) + " (untrained or diverged model?)");
        }
        const double ab_t = schedule.alpha_bar[static_cast<size_t>(t)];
        const double ab_prev = schedule.alpha_bar[static_cast<size_t>(t - 1)];
        const double beta_t = schedule.beta[static_cast<size_t>(t)];
        const double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
        const double ct = std::sqrt(1.0 - beta_t) * (1.0 - ab_prev) / (1.0 - ab_t);
        const double sigma = t > 1 ? std::sqrt(schedule.posterior_variance(t)) : 0.0;
        for (size_t i = 0; i < z.data.size(); ++i) {
            double mu = c0 * z0_hat.data[i] + ct * z.data[i];
            z.data[i] = t > 1 ? mu + sigma * rng.next_gaussian() : mu;
        }
    }

    auto [recon, probs] = model.reconstruct(nullptr, Var(z));
    if (!recon.value().all_finite() || !probs.value().all_finite()) {
        throw NumericalError("sample_scanpath: non-finite reconstruction");
    }
    const int n = decode_length(model.validity_probs(probs), opts.validity_threshold);

    Scanpath s;
    s.fixations.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Fixation f;
        f.x = std::clamp(recon.value().at(i, 0), 0.0, 1.0);
        f.y = std::clamp(recon.value().at(i, 1), 0.0, 1.0);
        f.duration = std::max(recon.value().at(i, 2), opts.min_duration);
        s.fixations.push_back(f);
    }
    return s;
}

std::vector<Scanpath> sample_scanpaths(const Denoiser & model, const Var & cond,
                                       const NoiseSchedule & schedule, uint64_t seed, int n,
                                       int threads, const SampleOptions & opts) {
    if (n < 1) {
        throw ConfigError("sample_scanpaths: n must be >= 1");
    }
    std::vector<Scanpath> out(static_cast<size_t>(n));
    Rng master(seed, rng_stream::kSample);

    auto run_chain = [&](int i) {
        Rng chain = master.split(static_cast<uint64_t>(i));
        out[static_cast<size_t>(i)] = sample_scanpath(model, cond, schedule, chain, opts);
    };

    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) {
            run_chain(i);
        }
        return out;
    }
    // chain i's randomness is independent of the thread that runs it, so the
    // merged result is identical for any thread count
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    run_chain(i);
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
    return out;
}

} // namespace gazediff
