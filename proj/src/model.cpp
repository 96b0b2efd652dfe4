#include "model.hpp"

#include "errors.hpp"

#include <cmath>

namespace gazediff {

void DenoiserConfig::validate() const {
    if (layers < 1) {
        throw ConfigError("denoiser: layers must be >= 1");
    }
    if (heads < 1 || model_dim % heads != 0) {
        throw ConfigError("denoiser: heads must divide model_dim");
    }
    if (max_len < 1 || timesteps < 1 || ffn_mult < 1 || d_t < 1) {
        throw ConfigError("denoiser: max_len, timesteps, ffn_mult and d_t must be >= 1");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("denoiser: dropout must be in [0, 1)");
    }
}

DropoutMasks DropoutMasks::draw(const DenoiserConfig & cfg, Rng & rng) {
    DropoutMasks m;
    if (cfg.dropout <= 0.0) {
        return m;
    }
    const double keep = 1.0 - cfg.dropout;
    m.sublayer.reserve(static_cast<size_t>(cfg.layers) * 3);
    for (int l = 0; l < cfg.layers * 3; ++l) {
        Tensor mask = Tensor::zeros({cfg.max_len, cfg.model_dim});
        for (double & v : mask.data) {
            v = rng.next_double() < keep ? 1.0 / keep : 0.0;
        }
        m.sublayer.push_back(std::move(mask));
    }
    return m;
}

Denoiser::Denoiser(const DenoiserConfig & cfg, int d_v, ParamStore & params, uint64_t init_seed)
    : cfg_(cfg), d_v_(d_v) {
    cfg_.validate();
    bind(params, true, init_seed);
}

Denoiser::Denoiser(const DenoiserConfig & cfg, int d_v, ParamStore & params) : cfg_(cfg), d_v_(d_v) {
    cfg_.validate();
    bind(params, false, 0);
}

void Denoiser::bind(ParamStore & params, bool create, uint64_t init_seed) {
    Rng rng(init_seed, rng_stream::kInit);
    const int d = cfg_.model_dim;
    auto mat = [&](const std::string & name, int64_t rows, int64_t cols) -> Parameter * {
        if (create) {
            return &params.create(name, init_trunc_normal({rows, cols}, 0.02, rng));
        }
        Parameter * p = params.find(name);
        if (p == nullptr) {
            throw FormatError("checkpoint is missing parameter: " + name);
        }
        require_shape(p->value, {rows, cols}, name.c_str());
        return p;
    };
    auto vec = [&](const std::string & name, int64_t n, double fill) -> Parameter * {
        if (create) {
            return &params.create(name, Tensor::full({n}, fill));
        }
        Parameter * p = params.find(name);
        if (p == nullptr) {
            throw FormatError("checkpoint is missing parameter: " + name);
        }
        require_shape(p->value, {n}, name.c_str());
        return p;
    };

    embed_w_ = mat("embed.w", 3, d);
    embed_b_ = vec("embed.b", d, 0.0);
    pos_ = mat("pos", cfg_.max_len, d);

    proj_v_w_ = mat("cond.v.w", d_v_, d);
    proj_v_b_ = vec("cond.v.b", d, 0.0);
    proj_t_w_ = mat("cond.t.w", cfg_.d_t, d);
    proj_t_b_ = vec("cond.t.b", d, 0.0);
    proj_j_w_ = mat("cond.joint.w", 2 * d, d);
    proj_j_b_ = vec("cond.joint.b", d, 0.0);

    layers_.clear();
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerParams lp;
        lp.norm1_g = vec(p + "norm1.g", d, 1.0);
        lp.norm1_b = vec(p + "norm1.b", d, 0.0);
        lp.q_w = mat(p + "self.q.w", d, d);
        lp.q_b = vec(p + "self.q.b", d, 0.0);
        lp.k_w = mat(p + "self.k.w", d, d);
        lp.k_b = vec(p + "self.k.b", d, 0.0);
        lp.v_w = mat(p + "self.v.w", d, d);
        lp.v_b = vec(p + "self.v.b", d, 0.0);
        lp.o_w = mat(p + "self.o.w", d, d);
        lp.o_b = vec(p + "self.o.b", d, 0.0);
        lp.norm2_g = vec(p + "norm2.g", d, 1.0);
        lp.norm2_b = vec(p + "norm2.b", d, 0.0);
        lp.cq_w = mat(p + "cross.q.w", d, d);
        lp.cq_b = vec(p + "cross.q.b", d, 0.0);
        lp.ck_w = mat(p + "cross.k.w", d, d);
        lp.ck_b = vec(p + "cross.k.b", d, 0.0);
        lp.cv_w = mat(p + "cross.v.w", d, d);
        lp.cv_b = vec(p + "cross.v.b", d, 0.0);
        lp.co_w = mat(p + "cross.o.w", d, d);
        lp.co_b = vec(p + "cross.o.b", d, 0.0);
        lp.norm3_g = vec(p + "norm3.g", d, 1.0);
        lp.norm3_b = vec(p + "norm3.b", d, 0.0);
        lp.ffn1_w = mat(p + "ffn.fc1.w", d, cfg_.ffn_dim());
        lp.ffn1_b = vec(p + "ffn.fc1.b", cfg_.ffn_dim(), 0.0);
        lp.ffn2_w = mat(p + "ffn.fc2.w", cfg_.ffn_dim(), d);
        lp.ffn2_b = vec(p + "ffn.fc2.b", d, 0.0);
        layers_.push_back(lp);
    }

    final_norm_g_ = vec("final_norm.g", d, 1.0);
    final_norm_b_ = vec("final_norm.b", d, 0.0);

    rec1_w_ = mat("recon.fc1.w", d, d);
    rec1_b_ = vec("recon.fc1.b", d, 0.0);
    rec2_w_ = mat("recon.fc2.w", d, d / 2);
    rec2_b_ = vec("recon.fc2.b", d / 2, 0.0);
    rec3_w_ = mat("recon.fc3.w", d / 2, 3);
    rec3_b_ = vec("recon.fc3.b", 3, 0.0);

    val_w_ = mat("validity.w", d, 1);
    val_b_ = vec("validity.b", 1, 0.0);
}

Var Denoiser::lift(Tape * tape, Parameter * p) {
    if (tape == nullptr) {
        return Var(p->value);
    }
    return tape->leaf(p->value, &p->grad);
}

namespace {

// x @ w + b; the rank-1 bias broadcasts as a single row in add().
Var linear(Tape * tape, const Var & x, Parameter * w, Parameter * b) {
    Var wv = tape != nullptr ? tape->leaf(w->value, &w->grad) : Var(w->value);
    Var bv = tape != nullptr ? tape->leaf(b->value, &b->grad) : Var(b->value);
    return add(matmul(x, wv), bv);
}

} // namespace

Var Denoiser::joint_embed(Tape * tape, const VisualFeatureMap & vmap,
                          const TaskFeature & tfeat) const {
    if (vmap.dim != d_v_) {
        throw ShapeError("joint_embed: visual feature width " + std::to_string(vmap.dim) +
                         " does not match model d_v " + std::to_string(d_v_));
    }
    if (tfeat.dim() != cfg_.d_t) {
        throw ShapeError("joint_embed: task feature width " + std::to_string(tfeat.dim()) +
                         " does not match model d_t " + std::to_string(cfg_.d_t));
    }
    Var v(vmap.flattened());                                // hw x d_v
    Var t(tfeat.vec.reshaped({1, cfg_.d_t}));               // 1 x d_t
    Var pv = linear(tape, v, proj_v_w_, proj_v_b_);         // hw x d
    Var pt = linear(tape, t, proj_t_w_, proj_t_b_);         // 1 x d
    Var tiled = repeat_rows(pt, vmap.patches());            // hw x d
    Var cat = concat_cols(pv, tiled);                       // hw x 2d
    return linear(tape, cat, proj_j_w_, proj_j_b_);         // hw x d
}

Var Denoiser::embed_scanpath(Tape * tape, const Tensor & padded_matrix) const {
    require_shape(padded_matrix, {cfg_.max_len, 3}, "embed_scanpath input");
    return linear(tape, Var(padded_matrix), embed_w_, embed_b_);
}

Tensor Denoiser::timestep_embedding(int t) const {
    const int d = cfg_.model_dim;
    Tensor emb = Tensor::zeros({1, d});
    const int half = d / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               static_cast<double>(half));
        emb.data[static_cast<size_t>(2 * i)] = std::sin(t * freq);
        emb.data[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    if (d % 2 == 1) {
        emb.data[static_cast<size_t>(d - 1)] = 0.0;
    }
    return emb;
}

Var Denoiser::attention(Tape * tape, const Var & queries_in, const Var & keys_in,
                        const Var & values_in, const LayerParams & lp, bool cross) const {
    const int d = cfg_.model_dim;
    const int dh = d / cfg_.heads;
    Var q = linear(tape, queries_in, cross ? lp.cq_w : lp.q_w, cross ? lp.cq_b : lp.q_b);
    Var k = linear(tape, keys_in, cross ? lp.ck_w : lp.k_w, cross ? lp.ck_b : lp.k_b);
    Var v = linear(tape, values_in, cross ? lp.cv_w : lp.v_w, cross ? lp.cv_b : lp.v_b);

    Var heads_out;
    for (int h = 0; h < cfg_.heads; ++h) {
        Var qh = slice_cols(q, static_cast<int64_t>(h) * dh, dh);
        Var kh = slice_cols(k, static_cast<int64_t>(h) * dh, dh);
        Var vh = slice_cols(v, static_cast<int64_t>(h) * dh, dh);
        Var scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Var ctx = matmul(softmax_rows(scores), vh);
        heads_out = h == 0 ? ctx : concat_cols(heads_out, ctx);
    }
    return linear(tape, heads_out, cross ? lp.co_w : lp.o_w, cross ? lp.co_b : lp.o_b);
}

Var Denoiser::forward(Tape * tape, const Var & z_t, int t, const Var & cond,
                      const DropoutMasks * masks) const {
    if (t < 1 || t > cfg_.timesteps) {
        throw ScheduleError("forward: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(cfg_.timesteps) + "]");
    }
    require_shape(z_t.value(), {cfg_.max_len, cfg_.model_dim}, "forward z_t");
    if (cfg_.use_cross_attention && cond.value().cols() != cfg_.model_dim) {
        throw ShapeError("forward: conditioning width must equal model_dim");
    }

    const bool drop = masks != nullptr && !masks->sublayer.empty();
    auto dropped = [&](Var x, int idx) {
        return drop ? mul_const(x, masks->sublayer[static_cast<size_t>(idx)]) : x;
    };

    // tokens = z_t + learnable positional encoding + sinusoidal timestep code
    Var x = add(z_t, lift(tape, pos_));
    Var temb(timestep_embedding(t));
    x = add(x, temb);

    for (int l = 0; l < cfg_.layers; ++l) {
        const LayerParams & lp = layers_[static_cast<size_t>(l)];
        // pre-norm residual blocks: self-attention, cross-attention, ffn
        Var n1 = layer_norm_rows(x, lift(tape, lp.norm1_g), lift(tape, lp.norm1_b));
        x = add(x, dropped(attention(tape, n1, n1, n1, lp, false), 3 * l));

        if (cfg_.use_cross_attention) {
            Var n2 = layer_norm_rows(x, lift(tape, lp.norm2_g), lift(tape, lp.norm2_b));
            x = add(x, dropped(attention(tape, n2, cond, cond, lp, true), 3 * l + 1));
        }

        Var n3 = layer_norm_rows(x, lift(tape, lp.norm3_g), lift(tape, lp.norm3_b));
        Var ff = linear(tape, relu(linear(tape, n3, lp.ffn1_w, lp.ffn1_b)), lp.ffn2_w, lp.ffn2_b);
        x = add(x, dropped(ff, 3 * l + 2));
    }

    return layer_norm_rows(x, lift(tape, final_norm_g_), lift(tape, final_norm_b_));
}

std::pair<Var, Var> Denoiser::reconstruct(Tape * tape, const Var & z0) const {
    require_shape(z0.value(), {cfg_.max_len, cfg_.model_dim}, "reconstruct input");
    Var h = relu(linear(tape, z0, rec1_w_, rec1_b_));
    h = relu(linear(tape, h, rec2_w_, rec2_b_));
    Var coords = linear(tape, h, rec3_w_, rec3_b_);          // L x 3
    Var probs = sigmoid(linear(tape, z0, val_w_, val_b_));   // L x 1
    return {coords, probs};
}

std::vector<double> Denoiser::validity_probs(const Var & probs_col) const {
    const Tensor & t = probs_col.value();
    return std::vector<double>(t.data.begin(), t.data.end());
}

} // namespace gazediff
