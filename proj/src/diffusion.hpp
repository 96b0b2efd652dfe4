#pragma once

#include "autodiff.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "scanpath.hpp"
#include "tensor.hpp"

#include <utility>
#include <vector>

namespace gazediff {

// Variance schedule tables. alpha_bar has T+1 entries with alpha_bar[0] = 1;
// beta[t] = 1 - alpha_bar[t] / alpha_bar[t-1] for t in [1, T] (beta[0] unused).
struct NoiseSchedule {
    int timesteps = 0;
    std::vector<double> alpha_bar;
    std::vector<double> beta;

    double posterior_variance(int t) const; // beta_tilde_t
    void validate() const;

    // alpha_bar_t = 1 - sqrt(t/T + s) for t in [1, T], clamped to at least
    // floor_eps at the tail; alpha_bar_0 is exactly 1.
    static NoiseSchedule sqrt_schedule(int timesteps, double s, double floor_eps = 1e-5);
    static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);
};

// Closed-form jump z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) noise.
Tensor q_sample(const Tensor & z0, int t, const Tensor & noise, const NoiseSchedule & schedule);

struct LossBreakdown {
    double vlb = 0.0;
    double rec = 0.0;
    double val = 0.0;
    double prior = 0.0;
    double total = 0.0;
};

// Importance sampler over timesteps: keeps the last 10 squared latent losses
// per t; before every t has a full history it samples uniformly with weight
// 1, afterwards p_t ~ sqrt(mean of squared recent losses) with a floor.
class TimestepSampler {
public:
    explicit TimestepSampler(int timesteps);

    bool warmed_up() const;
    void record(int t, double vlb_loss);
    std::pair<int, double> sample(Rng & rng) const; // (t, importance weight)
    std::vector<double> probabilities() const;      // indexed 1..T (entry 0 unused)

    int timesteps() const { return timesteps_; }

    // Checkpoint persistence: history as a T x capacity tensor plus per-t
    // counts and write positions.
    static constexpr int kCapacity = 10;
    Tensor history_tensor() const;
    Tensor state_tensor() const;
    void restore(const Tensor & history, const Tensor & state);

private:
    int timesteps_;
    std::vector<double> hist_;  // (T+1) x kCapacity ring buffers
    std::vector<int> count_;    // filled entries per t, capped at capacity
    std::vector<int> pos_;      // next write slot per t
};

// Tape-built loss terms, all means so magnitudes are size-independent.
// Callable with detached Vars for direct numeric checks.
Var latent_vlb_term(const Var & z0, const Var & z0_pred, double importance_weight);
Var reconstruction_term(const Var & recon, const Tensor & target, const std::vector<double> & validity);
Var validity_term(const Var & probs, const std::vector<double> & validity, double clamp_eps = 1e-7);
Var prior_term(const Var & z0, double alpha_bar_T);

struct TrainItem {
    PaddedScanpath padded;
    Var cond;                           // precomputed (possibly tape-recorded) V_joint
    const DropoutMasks * masks = nullptr; // per-item dropout, null disables
};

struct LossResult {
    Var total;
    LossBreakdown values;
    std::vector<std::pair<int, double>> vlb_samples; // (t, loss) to feed the sampler
};

// One importance-sampled timestep per item; the same corrupted latent feeds
// all loss terms. Noise and timestep draws come from the provided streams.
LossResult compute_losses(const std::vector<TrainItem> & batch, const Denoiser & model,
                          const NoiseSchedule & schedule, const TimestepSampler & sampler,
                          Tape & tape, Rng & t_rng, Rng & noise_rng, bool use_prior_loss);

struct SampleOptions {
    double validity_threshold = 0.5;
    double min_duration = 1e-3;
};

// Reverse denoising chain from a fresh Gaussian z_T. Deterministic given the
// rng state; callers pass independent split streams for distinct scanpaths.
Scanpath sample_scanpath(const Denoiser & model, const Var & cond, const NoiseSchedule & schedule,
                         Rng & rng, const SampleOptions & opts = {});

// n independent chains, optionally on several threads, merged in index order.
std::vector<Scanpath> sample_scanpaths(const Denoiser & model, const Var & cond,
                                       const NoiseSchedule & schedule, uint64_t seed, int n,
                                       int threads, const SampleOptions & opts = {});

} // namespace gazediff
