#include "optim.hpp"

#include "errors.hpp"

#include <cmath>

namespace gazediff {

Parameter & ParamStore::create(const std::string & name, Tensor value) {
    if (index_.count(name) != 0) {
        throw ConfigError("duplicate parameter name: " + name);
    }
    params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    index_[name] = params_.size() - 1;
    return *params_.back();
}

Parameter * ParamStore::find(const std::string & name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const auto & p : params_) {
        n += p->value.numel();
    }
    return n;
}

void ParamStore::zero_grads() {
    for (auto & p : params_) {
        std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
    }
}

void ParamStore::round_to_f32() {
    for (auto & p : params_) {
        for (double & x : p->value.data) {
            x = static_cast<double>(static_cast<float>(x));
        }
        for (double & x : p->m.data) {
            x = static_cast<double>(static_cast<float>(x));
        }
        for (double & x : p->v.data) {
            x = static_cast<double>(static_cast<float>(x));
        }
    }
}

void adamw_step(Parameter & p, const AdamWConfig & cfg, int64_t step) {
    if (step < 1) {
        throw ConfigError("adamw_step: step must be >= 1");
    }
    const double b1 = cfg.beta1;
    const double b2 = cfg.beta2;
    // Bias correction folded into the step size (Kingma & Ba's efficient
    // form); eps is added to the uncorrected root second moment.
    const double alpha = cfg.lr * std::sqrt(1.0 - std::pow(b2, static_cast<double>(step))) /
                         (1.0 - std::pow(b1, static_cast<double>(step)));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (size_t i = 0; i < p.value.data.size(); ++i) {
        const double g = p.grad.data[i];
        p.m.data[i] = b1 * p.m.data[i] + (1.0 - b1) * g;
        p.v.data[i] = b2 * p.v.data[i] + (1.0 - b2) * g * g;
        p.value.data[i] = p.value.data[i] * decay -
                          alpha * p.m.data[i] / (std::sqrt(p.v.data[i]) + cfg.eps);
    }
}

void adamw_step(ParamStore & params, const AdamWConfig & cfg, int64_t step) {
    for (auto & p : params.all()) {
        adamw_step(*p, cfg, step);
    }
}

double clip_grad_norm(ParamStore & params, double max_norm) {
    double sq = 0.0;
    for (const auto & p : params.all()) {
        for (double g : p->grad.data) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto & p : params.all()) {
            for (double & g : p->grad.data) {
                g *= s;
            }
        }
    }
    return norm;
}

Tensor init_trunc_normal(std::vector<int64_t> shape, double std_dev, Rng & rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double & v : t.data) {
        double z = rng.next_gaussian();
        while (std::fabs(z) > 2.0) {
            z = rng.next_gaussian();
        }
        v = z * std_dev;
    }
    return t;
}

} // namespace gazediff
