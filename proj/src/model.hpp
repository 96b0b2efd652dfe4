#pragma once

#include "autodiff.hpp"
#include "features.hpp"
#include "optim.hpp"
#include "scanpath.hpp"

#include <string>
#include <vector>

namespace gazediff {

struct DenoiserConfig {
    int layers = 6;
    int heads = 8;
    int model_dim = 512;
    int ffn_mult = 4;
    int max_len = 16;
    int timesteps = 1000;
    int d_t = 512;
    double dropout = 0.1;
    bool use_cross_attention = true;

    int ffn_dim() const { return model_dim * ffn_mult; }
    void validate() const;
};

// Per-step dropout masks, pre-drawn by the trainer so forward passes stay
// pure. Empty masks (or dropout 0) disable dropout.
struct DropoutMasks {
    std::vector<Tensor> sublayer; // 3 per layer: self-attn, cross-attn, ffn outputs

    static DropoutMasks draw(const DenoiserConfig & cfg, Rng & rng);
};

// The denoising network: scanpath embedding, transformer encoder with
// interleaved cross-attention on the multimodal conditioning, coordinate
// reconstruction head and validity head. Parameters live in the caller's
// ParamStore; passing a null tape runs inference without recording.
class Denoiser {
public:
    Denoiser(const DenoiserConfig & cfg, int d_v, ParamStore & params, uint64_t init_seed);

    // Rebinds to parameters already present in the store (checkpoint load).
    Denoiser(const DenoiserConfig & cfg, int d_v, ParamStore & params);

    const DenoiserConfig & config() const { return cfg_; }
    int d_v() const { return d_v_; }

    // V_joint: project both modalities to model width, tile the task vector
    // over the patch grid, concatenate channel-wise and fuse. (h*w) x d.
    Var joint_embed(Tape * tape, const VisualFeatureMap & vmap, const TaskFeature & tfeat) const;

    // g: L x 3 scanpath matrix -> L x d latent.
    Var embed_scanpath(Tape * tape, const Tensor & padded_matrix) const;

    // phi: predict the clean latent from a corrupted one at timestep t.
    Var forward(Tape * tape, const Var & z_t, int t, const Var & cond,
                const DropoutMasks * masks = nullptr) const;

    // gamma + validity head: L x d latent -> (L x 3 scanpath matrix,
    // L validity probabilities in (0,1)).
    std::pair<Var, Var> reconstruct(Tape * tape, const Var & z0) const;

    std::vector<double> validity_probs(const Var & probs_col) const;

    // Sinusoidal embedding of the diffusion timestep, width d.
    Tensor timestep_embedding(int t) const;

private:
    struct LayerParams {
        Parameter *norm1_g, *norm1_b;
        Parameter *q_w, *q_b, *k_w, *k_b, *v_w, *v_b, *o_w, *o_b;
        Parameter *norm2_g, *norm2_b;
        Parameter *cq_w, *cq_b, *ck_w, *ck_b, *cv_w, *cv_b, *co_w, *co_b;
        Parameter *norm3_g, *norm3_b;
        Parameter *ffn1_w, *ffn1_b, *ffn2_w, *ffn2_b;
    };

    void bind(ParamStore & params, bool create, uint64_t init_seed);
    Var attention(Tape * tape, const Var & queries_in, const Var & keys_in, const Var & values_in,
                  const LayerParams & lp, bool cross) const;
    static Var lift(Tape * tape, Parameter * p);

    DenoiserConfig cfg_;
    int d_v_ = 0;

    Parameter *embed_w_, *embed_b_; // g
    Parameter * pos_;               // learnable positional encoding, L x d
    Parameter *proj_v_w_, *proj_v_b_, *proj_t_w_, *proj_t_b_, *proj_j_w_, *proj_j_b_;
    std::vector<LayerParams> layers_;
    Parameter *final_norm_g_, *final_norm_b_;
    Parameter *rec1_w_, *rec1_b_, *rec2_w_, *rec2_b_, *rec3_w_, *rec3_b_; // gamma
    Parameter *val_w_, *val_b_;                                          // l
};

} // namespace gazediff
