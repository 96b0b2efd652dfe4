#include "gradcheck.hpp"

#include "autodiff.hpp"
#include "diffusion.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "rng.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

namespace gazediff {

namespace {

constexpr double kStep = 1e-5;

struct Accumulator {
    double max_rel = 0.0;
    int64_t checks = 0;

    void observe(double analytic, double numeric) {
        double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
        max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
        ++checks;
    }
};

Tensor random_tensor(std::vector<int64_t> shape, Rng & rng, double scale = 1.0,
                     double kink_margin = 0.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double & v : t.data) {
        do {
            v = rng.next_gaussian() * scale;
        } while (kink_margin > 0.0 && std::fabs(v) < kink_margin);
    }
    return t;
}

// Checks d(sum(f(x) * R))/dx for every coordinate of every input.
void check_op(Accumulator & acc, std::vector<Tensor> inputs,
              const std::function<Var(const std::vector<Var> &)> & f, Rng & rng) {
    std::vector<Var> probe;
    probe.reserve(inputs.size());
    for (const Tensor & t : inputs) {
        probe.emplace_back(t);
    }
    Tensor r = random_tensor(f(probe).value().shape, rng);

    auto loss_value = [&](const std::vector<Tensor> & xs) {
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const Tensor & t : xs) {
            vars.emplace_back(t);
        }
        return scalar_value(sum_all(mul_const(f(vars), r)));
    };

    Tape tape;
    std::vector<Tensor> grads;
    std::vector<Var> leaves;
    grads.reserve(inputs.size());
    for (const Tensor & t : inputs) {
        grads.push_back(Tensor::zeros(t.shape));
    }
    for (size_t i = 0; i < inputs.size(); ++i) {
        leaves.push_back(tape.leaf(inputs[i], &grads[i]));
    }
    tape.backward(sum_all(mul_const(f(leaves), r)));

    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t c = 0; c < inputs[i].data.size(); ++c) {
            std::vector<Tensor> plus = inputs;
            std::vector<Tensor> minus = inputs;
            plus[i].data[c] += kStep;
            minus[i].data[c] -= kStep;
            double fd = (loss_value(plus) - loss_value(minus)) / (2.0 * kStep);
            acc.observe(grads[i].data[c], fd);
        }
    }
}

void check_primitive_ops(Accumulator & acc, Rng & rng) {
    auto dims = [&](int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(hi - lo + 1)));
    };
    const int64_t n = dims(2, 4);
    const int64_t m = dims(2, 4);
    const int64_t k = dims(2, 4);

    check_op(acc, {random_tensor({n, m}, rng), random_tensor({m, k}, rng)},
             [](const std::vector<Var> & v) { return matmul(v[0], v[1]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return transpose(v[0]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng), random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return add(v[0], v[1]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng), random_tensor({m}, rng)},
             [](const std::vector<Var> & v) { return add(v[0], v[1]); }, rng); // broadcast row
    check_op(acc, {random_tensor({n, m}, rng), random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return mul(v[0], v[1]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return affine(v[0], -1.7, 0.4); }, rng);
    check_op(acc, {random_tensor({n, m}, rng, 1.0, 0.05)},
             [](const std::vector<Var> & v) { return relu(v[0]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng, 1.0, 0.05)},
             [](const std::vector<Var> & v) { return vabs(v[0]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return square(v[0]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return sigmoid(v[0]); }, rng);
    {
        Tensor pos = random_tensor({n, m}, rng);
        for (double & v : pos.data) {
            v = 0.1 + std::fabs(v); // keep log well away from zero
        }
        check_op(acc, {pos}, [](const std::vector<Var> & v) { return vlog(v[0]); }, rng);
    }
    {
        // clamp: keep inputs away from the boundaries so FD stays two-sided
        Tensor t = random_tensor({n, m}, rng);
        for (double & v : t.data) {
            if (std::fabs(v - 1.0) < 0.05 || std::fabs(v + 1.0) < 0.05) {
                v = 0.5;
            }
        }
        check_op(acc, {t}, [](const std::vector<Var> & v) { return clamp(v[0], -1.0, 1.0); }, rng);
    }
    check_op(acc, {random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return softmax_rows(v[0]); }, rng);
    check_op(acc,
             {random_tensor({n, m}, rng), random_tensor({m}, rng, 0.5),
              random_tensor({m}, rng, 0.5)},
             [](const std::vector<Var> & v) { return layer_norm_rows(v[0], v[1], v[2]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng), random_tensor({n, k}, rng)},
             [](const std::vector<Var> & v) { return concat_cols(v[0], v[1]); }, rng);
    check_op(acc, {random_tensor({n, m}, rng)},
             [m](const std::vector<Var> & v) { return slice_cols(v[0], m / 2, m - m / 2); }, rng);
    check_op(acc, {random_tensor({1, m}, rng)},
             [n](const std::vector<Var> & v) { return repeat_rows(v[0], n); }, rng);
    check_op(acc, {random_tensor({n, m}, rng)},
             [](const std::vector<Var> & v) { return mean_all(v[0]); }, rng);

    // composite: one attention head built from the primitives
    check_op(acc,
             {random_tensor({n, k}, rng), random_tensor({m, k}, rng), random_tensor({m, k}, rng)},
             [k](const std::vector<Var> & v) {
                 Var scores = scale(matmul(v[0], transpose(v[1])),
                                    1.0 / std::sqrt(static_cast<double>(k)));
                 return matmul(softmax_rows(scores), v[2]);
             },
             rng);
}

// Random 3-layer MLP: FD over all weights through a scalar loss.
void check_mlp(Accumulator & acc, Rng & rng) {
    const int64_t in = 3, hid = 5, out = 2;
    std::vector<Tensor> ws = {random_tensor({in, hid}, rng, 0.5), random_tensor({hid}, rng, 0.5),
                              random_tensor({hid, hid}, rng, 0.5), random_tensor({hid}, rng, 0.5),
                              random_tensor({hid, out}, rng, 0.5), random_tensor({out}, rng, 0.5)};
    Tensor x = random_tensor({4, in}, rng);
    auto net = [&x](const std::vector<Var> & w) {
        Var h = relu(add(matmul(Var(x), w[0]), w[1]));
        h = relu(add(matmul(h, w[2]), w[3]));
        return mean_all(square(add(matmul(h, w[4]), w[5])));
    };
    check_op(acc, ws, [&](const std::vector<Var> & w) { return net(w); }, rng);
}

// Full toy denoiser: the complete training loss against FD over sampled
// parameter coordinates.
void check_denoiser(Accumulator & acc, Rng & rng, uint64_t seed) {
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.model_dim = 8;
    cfg.ffn_mult = 2;
    cfg.max_len = 4;
    cfg.timesteps = 10;
    cfg.d_t = 4;
    cfg.dropout = 0.0;

    ParamStore params;
    Denoiser model(cfg, /*d_v=*/6, params, seed);

    VisualFeatureMap vmap;
    vmap.h = 2;
    vmap.w = 2;
    vmap.dim = 6;
    vmap.grid = random_tensor({2, 2, 6}, rng, 0.8);
    TaskFeature tfeat{random_tensor({4}, rng, 0.8)};

    PaddedScanpath item;
    item.matrix = Tensor::zeros({cfg.max_len, 3});
    item.validity.assign(static_cast<size_t>(cfg.max_len), 0.0);
    const int valid = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.max_len)));
    for (int i = 0; i < valid; ++i) {
        item.matrix.at(i, 0) = rng.next_double();
        item.matrix.at(i, 1) = rng.next_double();
        item.matrix.at(i, 2) = 0.1 + rng.next_double() * 0.4;
        item.validity[static_cast<size_t>(i)] = 1.0;
    }

    NoiseSchedule schedule = NoiseSchedule::sqrt_schedule(cfg.timesteps, 1e-4);
    const int t = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.timesteps)));
    Tensor noise = random_tensor({cfg.max_len, cfg.model_dim}, rng);
    const double ab = schedule.alpha_bar[static_cast<size_t>(t)];
    const double abar_T = schedule.alpha_bar[static_cast<size_t>(cfg.timesteps)];

    auto loss_expr = [&](Tape * tape) {
        Var cond = model.joint_embed(tape, vmap, tfeat);
        Var z0 = model.embed_scanpath(tape, item.matrix);
        Tensor scaled_noise = noise;
        const double nb = std::sqrt(1.0 - ab);
        for (double & v : scaled_noise.data) {
            v *= nb;
        }
        Var z_t = add(scale(z0, std::sqrt(ab)), Var(std::move(scaled_noise)));
        Var pred = model.forward(tape, z_t, t, cond);
        auto [recon, probs] = model.reconstruct(tape, pred);
        Var loss = latent_vlb_term(z0, pred, 1.0);
        loss = add(loss, reconstruction_term(recon, item.matrix, item.validity));
        loss = add(loss, validity_term(probs, item.validity));
        loss = add(loss, prior_term(z0, abar_T));
        return loss;
    };

    params.zero_grads();
    {
        Tape tape;
        tape.backward(loss_expr(&tape));
    }

    // FD over a random sample of parameter coordinates
    const int probes = 24;
    for (int p = 0; p < probes; ++p) {
        auto & param = *params.all()[rng.next_below(params.size())];
        size_t c = static_cast<size_t>(rng.next_below(param.value.data.size()));
        const double saved = param.value.data[c];
        param.value.data[c] = saved + kStep;
        double up = scalar_value(loss_expr(nullptr));
        param.value.data[c] = saved - kStep;
        double down = scalar_value(loss_expr(nullptr));
        param.value.data[c] = saved;
        acc.observe(param.grad.data[c], (up - down) / (2.0 * kStep));
    }
}

} // namespace

GradCheckReport run_gradcheck(uint64_t seeds, std::ostream * log) {
    Accumulator acc;
    for (uint64_t s = 0; s < seeds; ++s) {
        Rng rng(s, 0x6ead);
        check_primitive_ops(acc, rng);
        check_mlp(acc, rng);
        check_denoiser(acc, rng, s);
        if (log != nullptr && (s + 1) % 25 == 0) {
            *log << "gradcheck seed " << (s + 1) << "/" << seeds << " max_rel_err=" << acc.max_rel
                 << "\n";
        }
    }
    GradCheckReport rep;
    rep.max_rel_err = acc.max_rel;
    rep.checks = acc.checks;
    rep.pass = acc.max_rel < kGradCheckTolerance;
    return rep;
}

} // namespace gazediff
