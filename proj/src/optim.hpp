#pragma once

#include "rng.hpp"
#include "tensor.hpp"

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace gazediff {

// Learnable tensor with gradient buffer and Adam moment state.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m; // first moment
    Tensor v; // second moment

    explicit Parameter(std::string nm, Tensor val)
        : name(std::move(nm)),
          value(std::move(val)),
          grad(Tensor::zeros(value.shape)),
          m(Tensor::zeros(value.shape)),
          v(Tensor::zeros(value.shape)) {}
};

// Owns all parameters of a model in registration order. Order is the
// iteration, checkpoint and update order, which keeps runs reproducible.
class ParamStore {
public:
    Parameter & create(const std::string & name, Tensor value);
    Parameter * find(const std::string & name);
    const std::vector<std::unique_ptr<Parameter>> & all() const { return params_; }
    size_t size() const { return params_.size(); }
    int64_t total_elements() const;

    void zero_grads();

    // Snaps values and moments to their nearest f32, so that the f32
    // checkpoint payload round-trips bit-exactly and a resumed run follows
    // the uninterrupted trajectory.
    void round_to_f32();

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, size_t> index_;
};

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

// Decoupled weight decay (applied to the value before the Adam update),
// bias correction folded into the step size with eps added to the raw
// root second moment.
void adamw_step(ParamStore & params, const AdamWConfig & cfg, int64_t step);
void adamw_step(Parameter & p, const AdamWConfig & cfg, int64_t step);

// Global grad-norm clipping; returns the pre-clip norm.
double clip_grad_norm(ParamStore & params, double max_norm);

// Truncated normal (resampled beyond two std) initializer.
Tensor init_trunc_normal(std::vector<int64_t> shape, double std_dev, Rng & rng);

} // namespace gazediff
