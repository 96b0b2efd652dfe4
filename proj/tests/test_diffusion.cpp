#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffusion.hpp"
#include "errors.hpp"
#include "model.hpp"

#include <cmath>
#include <limits>
#include <memory>

using namespace gazediff;

// ---------------------------------------------------------------------------
// schedule

TEST_CASE("sqrt schedule endpoints and clamping") {
    NoiseSchedule s = NoiseSchedule::sqrt_schedule(1000, 1e-4);
    CHECK(s.alpha_bar[0] == 1.0);
    // closed form at t=1 is 1 - sqrt(1/1000 + 1e-4)
    CHECK(s.alpha_bar[1] == doctest::Approx(1.0 - std::sqrt(0.001 + 1e-4)).epsilon(1e-12));
    // raw closed form at t=T is 1 - sqrt(1.0001) < 0: the floor engages
    CHECK(s.alpha_bar[1000] == doctest::Approx(1e-5));
    // and only at the tail
    CHECK(s.alpha_bar[999] > 1e-4);
    CHECK(s.alpha_bar[999] == doctest::Approx(1.0 - std::sqrt(0.999 + 1e-4)).epsilon(1e-9));
}

TEST_CASE("sqrt schedule is strictly decreasing with betas in (0,1)") {
    for (int T : {1, 10, 100, 1000}) {
        NoiseSchedule s = NoiseSchedule::sqrt_schedule(T, 1e-4);
        for (int t = 1; t <= T; ++t) {
            CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            CHECK(s.beta[t] > 0.0);
            CHECK(s.beta[t] < 1.0);
        }
    }
}

TEST_CASE("alpha_bar reconstructs from beta to 1e-12") {
    NoiseSchedule s = NoiseSchedule::sqrt_schedule(500, 1e-4);
    double acc = 1.0;
    for (int t = 1; t <= 500; ++t) {
        acc *= 1.0 - s.beta[t];
        CHECK(std::fabs(acc - s.alpha_bar[t]) < 1e-12);
    }
}

TEST_CASE("schedule validation rejects bad parameters") {
    CHECK_THROWS_AS(NoiseSchedule::sqrt_schedule(0, 1e-4), ScheduleError);
    CHECK_THROWS_AS(NoiseSchedule::sqrt_schedule(100, 0.0), ScheduleError);
    CHECK_THROWS_AS(NoiseSchedule::sqrt_schedule(100, 2.0), ScheduleError);
    // a flat clamped tail violates strict monotonicity and is rejected
    CHECK_THROWS_AS(NoiseSchedule::from_alpha_bar({1.0, 0.5, 1e-5, 1e-5}), ScheduleError);
}

// ---------------------------------------------------------------------------
// q_sample

TEST_CASE("q_sample at alpha_bar near 1 returns the input") {
    NoiseSchedule s = NoiseSchedule::from_alpha_bar({1.0, 1.0 - 1e-12});
    Tensor z0 = Tensor::matrix(2, 2, {1.0, -2.0, 3.0, -4.0});
    Tensor noise = Tensor::full({2, 2}, 5.0);
    Tensor zt = q_sample(z0, 1, noise, s);
    for (size_t i = 0; i < zt.data.size(); ++i) {
        CHECK(zt.data[i] == doctest::Approx(z0.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("q_sample at alpha_bar near 0 returns the noise") {
    NoiseSchedule s = NoiseSchedule::from_alpha_bar({1.0, 0.5, 1e-12});
    Tensor z0 = Tensor::full({2, 2}, 3.0);
    Tensor noise = Tensor::matrix(2, 2, {1.0, -1.0, 2.0, -2.0});
    Tensor zt = q_sample(z0, 2, noise, s);
    for (size_t i = 0; i < zt.data.size(); ++i) {
        CHECK(zt.data[i] == doctest::Approx(noise.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("q_sample rejects out-of-range timesteps") {
    NoiseSchedule s = NoiseSchedule::sqrt_schedule(10, 1e-4);
    Tensor z0 = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(q_sample(z0, 0, z0, s), ScheduleError);
    CHECK_THROWS_AS(q_sample(z0, 11, z0, s), ScheduleError);
}

TEST_CASE("q_sample at t=T is approximately standard normal (Monte Carlo)") {
    NoiseSchedule s = NoiseSchedule::sqrt_schedule(100, 1e-4);
    Rng rng(7);
    Tensor z0 = Tensor::zeros({2, 4});
    for (double & v : z0.data) {
        v = rng.next_gaussian();
    }
    const int n = 2000;
    std::vector<double> sum(z0.data.size(), 0.0), sq(z0.data.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        Tensor noise = Tensor::zeros(z0.shape);
        for (double & v : noise.data) {
            v = rng.next_gaussian();
        }
        Tensor zt = q_sample(z0, 100, noise, s);
        for (size_t k = 0; k < zt.data.size(); ++k) {
            sum[k] += zt.data[k];
            sq[k] += zt.data[k] * zt.data[k];
        }
    }
    for (size_t k = 0; k < sum.size(); ++k) {
        double mean = sum[k] / n;
        double var = sq[k] / n - mean * mean;
        CHECK(std::fabs(mean) < 0.1);
        CHECK(var > 0.85);
        CHECK(var < 1.15);
    }
}

// ---------------------------------------------------------------------------
// loss terms

TEST_CASE("reconstruction term: one valid fixation, hand value") {
    // s = (0.5, 0.5, 0.2), s~ = (0.4, 0.6, 0.2) -> |dx|+|dy|+|dm| = 0.2
    Tensor target = Tensor::matrix(3, 3, {0.5, 0.5, 0.2, 0, 0, 0, 0, 0, 0});
    Tensor recon = Tensor::matrix(3, 3, {0.4, 0.6, 0.2, 9, 9, 9, 9, 9, 9});
    std::vector<double> validity = {1.0, 0.0, 0.0};
    double rec = scalar_value(reconstruction_term(Var(recon), target, validity));
    CHECK(rec == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("reconstruction term averages over valid rows only") {
    Tensor target = Tensor::matrix(2, 3, {0.5, 0.5, 0.2, 0.1, 0.1, 0.1});
    Tensor recon = Tensor::matrix(2, 3, {0.4, 0.6, 0.2, 0.1, 0.1, 0.5});
    double rec = scalar_value(reconstruction_term(Var(recon), target, {1.0, 1.0}));
    CHECK(rec == doctest::Approx((0.2 + 0.4) / 2.0).epsilon(1e-12));
}

TEST_CASE("validity term: hand BCE value") {
    // u = [1,1,0], u~ = [0.9, 0.8, 0.1] -> -(ln .9 + ln .8 + ln .9)/3
    Tensor probs = Tensor::matrix(3, 1, {0.9, 0.8, 0.1});
    double val = scalar_value(validity_term(Var(probs), {1.0, 1.0, 0.0}));
    double expect = -(std::log(0.9) + std::log(0.8) + std::log(0.9)) / 3.0;
    CHECK(val == doctest::Approx(expect).epsilon(1e-12));
    CHECK(val == doctest::Approx(0.1446).epsilon(1e-3));
}

TEST_CASE("perfect predictions zero every loss term") {
    Tensor z0 = Tensor::matrix(2, 2, {0.3, -0.2, 0.7, 0.1});
    CHECK(scalar_value(latent_vlb_term(Var(z0), Var(z0), 1.0)) == 0.0);

    Tensor target = Tensor::matrix(2, 3, {0.5, 0.5, 0.2, 0, 0, 0});
    CHECK(scalar_value(reconstruction_term(Var(target), target, {1.0, 0.0})) == 0.0);

    // probabilities at the clamp edge: BCE bounded by the clamp epsilon
    Tensor probs = Tensor::matrix(2, 1, {1.0, 0.0});
    double val = scalar_value(validity_term(Var(probs), {1.0, 0.0}));
    CHECK(val == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-6));
    CHECK(val < 1e-6);

    CHECK(scalar_value(prior_term(Var(z0), 0.0)) == 0.0);
}

TEST_CASE("prior term scales the mean squared latent by alpha_bar_T") {
    Tensor z0 = Tensor::matrix(1, 2, {3.0, 4.0});
    double prior = scalar_value(prior_term(Var(z0), 1e-5));
    CHECK(prior == doctest::Approx(1e-5 * (9.0 + 16.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("total equals the sum of its parts") {
    DenoiserConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.model_dim = 8;
    cfg.ffn_mult = 2;
    cfg.max_len = 4;
    cfg.timesteps = 10;
    cfg.d_t = 4;
    cfg.dropout = 0.0;
    ParamStore params;
    Denoiser model(cfg, 6, params, 1);

    Rng rng(2);
    VisualFeatureMap vmap;
    vmap.h = 1;
    vmap.w = 2;
    vmap.dim = 6;
    vmap.grid = Tensor::zeros({1, 2, 6});
    for (double & v : vmap.grid.data) {
        v = rng.next_gaussian();
    }
    TaskFeature tfeat{Tensor::zeros({4})};

    NoiseSchedule schedule = NoiseSchedule::sqrt_schedule(cfg.timesteps, 1e-4);
    TimestepSampler sampler(cfg.timesteps);
    Tape tape;
    Var cond = model.joint_embed(&tape, vmap, tfeat);
    std::vector<TrainItem> batch;
    for (int i = 0; i < 2; ++i) {
        Scanpath s;
        s.fixations = {{0.2, 0.3, 0.1}, {0.6, 0.7, 0.2}};
        TrainItem item;
        item.padded = pad_truncate(s, cfg.max_len);
        item.cond = cond;
        batch.push_back(std::move(item));
    }
    Rng t_rng(3), noise_rng(4);
    LossResult res = compute_losses(batch, model, schedule, sampler, tape, t_rng, noise_rng, true);
    CHECK(res.values.total ==
          doctest::Approx(res.values.vlb + res.values.rec + res.values.val + res.values.prior)
              .epsilon(1e-15));
    CHECK(res.values.prior > 0.0);
    CHECK(res.vlb_samples.size() == 2);

    // ablation switch: prior identically zero
    Tape tape2;
    Var cond2 = model.joint_embed(&tape2, vmap, tfeat);
    for (auto & item : batch) {
        item.cond = cond2;
    }
    Rng t_rng2(3), noise_rng2(4);
    LossResult res2 =
        compute_losses(batch, model, schedule, sampler, tape2, t_rng2, noise_rng2, false);
    CHECK(res2.values.prior == 0.0);
    CHECK(res2.values.total ==
          doctest::Approx(res2.values.vlb + res2.values.rec + res2.values.val).epsilon(1e-15));
}

TEST_CASE("empty batch is rejected") {
    DenoiserConfig cfg;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.model_dim = 4;
    cfg.max_len = 2;
    cfg.timesteps = 5;
    cfg.d_t = 2;
    cfg.dropout = 0.0;
    ParamStore params;
    Denoiser model(cfg, 2, params, 0);
    NoiseSchedule schedule = NoiseSchedule::sqrt_schedule(5, 1e-4);
    TimestepSampler sampler(5);
    Tape tape;
    Rng a(1), b(2);
    std::vector<TrainItem> batch;
    CHECK_THROWS_AS(compute_losses(batch, model, schedule, sampler, tape, a, b, true),
                    EmptyBatch);
}

// ---------------------------------------------------------------------------
// importance sampler

TEST_CASE("warmup samples uniformly with weight 1") {
    TimestepSampler sampler(50);
    CHECK_FALSE(sampler.warmed_up());
    Rng rng(5);
    std::vector<int> hits(51, 0);
    for (int i = 0; i < 5000; ++i) {
        auto [t, w] = sampler.sample(rng);
        CHECK(w == 1.0);
        CHECK(t >= 1);
        CHECK(t <= 50);
        hits[static_cast<size_t>(t)]++;
    }
    for (int t = 1; t <= 50; ++t) {
        CHECK(hits[static_cast<size_t>(t)] > 40); // ~100 expected
    }
}

TEST_CASE("equal histories give uniform probabilities and unit weights") {
    TimestepSampler sampler(20);
    for (int t = 1; t <= 20; ++t) {
        for (int k = 0; k < 10; ++k) {
            sampler.record(t, 0.5);
        }
    }
    CHECK(sampler.warmed_up());
    std::vector<double> p = sampler.probabilities();
    for (int t = 1; t <= 20; ++t) {
        CHECK(p[static_cast<size_t>(t)] == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
    }
    Rng rng(6);
    auto [t, w] = sampler.sample(rng);
    CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("history concentrated on one timestep dominates sampling") {
    // two-timestep toy: p_t ~ sqrt(mean squared loss) = (3, 1)/4
    TimestepSampler sampler(2);
    for (int k = 0; k < 10; ++k) {
        sampler.record(1, 3.0);
        sampler.record(2, 1.0);
    }
    std::vector<double> p = sampler.probabilities();
    CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(p[2] == doctest::Approx(0.25).epsilon(1e-9));

    Rng rng(7);
    int hits1 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        auto [t, w] = sampler.sample(rng);
        if (t == 1) {
            CHECK(w == doctest::Approx(1.0 / (2.0 * 0.75)).epsilon(1e-9));
            ++hits1;
        } else {
            CHECK(w == doctest::Approx(1.0 / (2.0 * 0.25)).epsilon(1e-9));
        }
    }
    CHECK(static_cast<double>(hits1) / n == doctest::Approx(0.75).epsilon(0.03));
}

TEST_CASE("ring buffer keeps only the last 10 entries") {
    TimestepSampler sampler(2);
    for (int k = 0; k < 10; ++k) {
        sampler.record(1, 100.0); // overwritten below
        sampler.record(2, 1.0);
    }
    for (int k = 0; k < 10; ++k) {
        sampler.record(1, 1.0);
    }
    std::vector<double> p = sampler.probabilities();
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("probability floor keeps every timestep reachable") {
    TimestepSampler sampler(4);
    for (int t = 1; t <= 4; ++t) {
        for (int k = 0; k < 10; ++k) {
            sampler.record(t, t == 1 ? 1e9 : 0.0);
        }
    }
    std::vector<double> p = sampler.probabilities();
    for (int t = 2; t <= 4; ++t) {
        CHECK(p[static_cast<size_t>(t)] > 0.0);
    }
}

TEST_CASE("importance weights keep the estimator unbiased") {
    // fixed synthetic landscape: L(t) = t
    const int T = 16;
    TimestepSampler sampler(T);
    for (int t = 1; t <= T; ++t) {
        for (int k = 0; k < 10; ++k) {
            sampler.record(t, static_cast<double>(t));
        }
    }
    double uniform_mean = 0.0;
    for (int t = 1; t <= T; ++t) {
        uniform_mean += t;
    }
    uniform_mean /= T;

    Rng rng(8);
    double weighted = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        auto [t, w] = sampler.sample(rng);
        weighted += w * static_cast<double>(t);
    }
    weighted /= n;
    CHECK(weighted == doctest::Approx(uniform_mean).epsilon(0.01));
}

TEST_CASE("sampler state round-trips through tensors") {
    TimestepSampler a(8);
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        a.record(1 + static_cast<int>(rng.next_below(8)), rng.next_double());
    }
    TimestepSampler b(8);
    b.restore(a.history_tensor(), a.state_tensor());
    CHECK(b.history_tensor().data == a.history_tensor().data);
    CHECK(b.state_tensor().data == a.state_tensor().data);
    CHECK(b.probabilities() == a.probabilities());
}

// ---------------------------------------------------------------------------
// sampling

namespace {

struct TinySetup {
    DenoiserConfig cfg;
    ParamStore params;
    std::unique_ptr<Denoiser> model;
    NoiseSchedule schedule;
    Var cond;

    TinySetup() {
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.model_dim = 8;
        cfg.ffn_mult = 2;
        cfg.max_len = 4;
        cfg.timesteps = 8;
        cfg.d_t = 4;
        cfg.dropout = 0.0;
        model = std::make_unique<Denoiser>(cfg, 6, params, 3);
        schedule = NoiseSchedule::sqrt_schedule(cfg.timesteps, 1e-4);
        Rng rng(4);
        VisualFeatureMap vmap;
        vmap.h = 2;
        vmap.w = 1;
        vmap.dim = 6;
        vmap.grid = Tensor::zeros({2, 1, 6});
        for (double & v : vmap.grid.data) {
            v = rng.next_gaussian();
        }
        TaskFeature tfeat{Tensor::zeros({4})};
        cond = model->joint_embed(nullptr, vmap, tfeat);
    }
};

} // namespace

TEST_CASE("sampling is deterministic per seed and differs across seeds") {
    TinySetup s;
    std::vector<Scanpath> a = sample_scanpaths(*s.model, s.cond, s.schedule, 11, 3, 1);
    std::vector<Scanpath> b = sample_scanpaths(*s.model, s.cond, s.schedule, 11, 3, 1);
    REQUIRE(a.size() == 3);
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].length() == b[i].length());
        for (size_t k = 0; k < a[i].length(); ++k) {
            CHECK(a[i].fixations[k].x == b[i].fixations[k].x);
            CHECK(a[i].fixations[k].y == b[i].fixations[k].y);
            CHECK(a[i].fixations[k].duration == b[i].fixations[k].duration);
        }
    }
    std::vector<Scanpath> c = sample_scanpaths(*s.model, s.cond, s.schedule, 12, 3, 1);
    bool identical = true;
    for (size_t i = 0; i < a.size() && identical; ++i) {
        if (a[i].length() != c[i].length()) {
            identical = false;
            break;
        }
        for (size_t k = 0; k < a[i].length(); ++k) {
            if (a[i].fixations[k].x != c[i].fixations[k].x) {
                identical = false;
                break;
            }
        }
    }
    CHECK_FALSE(identical);
}

TEST_CASE("thread count does not change sampled output") {
    TinySetup s;
    std::vector<Scanpath> one = sample_scanpaths(*s.model, s.cond, s.schedule, 21, 8, 1);
    std::vector<Scanpath> four = sample_scanpaths(*s.model, s.cond, s.schedule, 21, 8, 4);
    REQUIRE(one.size() == four.size());
    for (size_t i = 0; i < one.size(); ++i) {
        REQUIRE(one[i].length() == four[i].length());
        for (size_t k = 0; k < one[i].length(); ++k) {
            CHECK(one[i].fixations[k].x == four[i].fixations[k].x);
        }
    }
}

TEST_CASE("sampled fixations respect the decode contract") {
    TinySetup s;
    std::vector<Scanpath> out = sample_scanpaths(*s.model, s.cond, s.schedule, 31, 20, 2);
    for (const Scanpath & path : out) {
        CHECK(path.length() >= 1);
        CHECK(path.length() <= 4);
        for (const Fixation & f : path.fixations) {
            CHECK(f.x >= 0.0);
            CHECK(f.x <= 1.0);
            CHECK(f.y >= 0.0);
            CHECK(f.y <= 1.0);
            CHECK(f.duration >= 1e-3);
        }
    }
}

TEST_CASE("a NaN model state raises NumericalError") {
    TinySetup s;
    s.params.find("embed.w")->value.data[0] = std::numeric_limits<double>::quiet_NaN();
    // poison a weight that feeds the forward pass directly
    s.params.find("layer0.self.q.w")->value.data[0] =
        std::numeric_limits<double>::quiet_NaN();
    Rng rng(41);
    CHECK_THROWS_AS(sample_scanpath(*s.model, s.cond, s.schedule, rng), NumericalError);
}
