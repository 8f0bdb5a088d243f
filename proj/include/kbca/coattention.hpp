#pragma once

#include <vector>

#include "kbca/attention.hpp"
#include "kbca/config.hpp"
#include "kbca/tape.hpp"

namespace kbca {

struct LayerNormVars {
    Var gain, bias;
};

/// Two affine maps with a ReLU in between, hidden width 4d.
struct FfnVars {
    Var w1, b1, w2, b2;
};

struct CoattBranchVars {
    AttentionVars att;
    FfnVars ffn;
    LayerNormVars ln1, ln2;
    bool has_key_scorer = false;
    Var key_scorer;
};

/// One co-attention block: a text branch (Q from text, K/V from speech)
/// and a speech branch (Q from speech, K/V from text), shape-symmetric.
struct CoattBlockVars {
    CoattBranchVars text, speech;
};

struct CoattSettings {
    std::size_t heads = 4;
    Variant variant = Variant::Det;
    bool hard_knowledge = false;
    PriorSource prior_source = PriorSource::Knowledge;
    double weibull_k = 1.0;
    double gamma_beta = 10.0;
    double alpha_scale = 1.0;
    double dropout_p = 0.0;
    Mode mode = Mode::Infer;
    Rng* rng = nullptr;
    const Tensor* frozen_eps = nullptr;
};

/// Softened intensities of both modalities, as [n x 1] column Vars.
struct CoattKnowledge {
    Var i_text_soft;
    Var i_speech_soft;
};

struct CoattOutput {
    Var text, speech;
    bool has_kl = false;
    Var kl; // mean over the two branches
};

namespace detail {

struct BranchResult {
    Var out;
    bool has_kl = false;
    Var kl;
};

inline BranchResult coatt_branch(Var q_side, Var kv_side, const CoattBranchVars& p,
                                 const CoattSettings& s, bool have_knowledge,
                                 Var i_q_soft, Var i_k_soft, std::uint64_t branch_key) {
    BamSettings bam;
    bool need_bam = s.variant == Variant::Bam || s.hard_knowledge;
    Rng branch_rng = s.rng ? s.rng->substream(branch_key) : Rng(0);
    if (need_bam) {
        bam.variant = s.variant;
        bam.hard_knowledge = s.hard_knowledge;
        bam.prior_source = s.prior_source;
        bam.weibull_k = s.weibull_k;
        bam.gamma_beta = s.gamma_beta;
        bam.alpha_scale = s.alpha_scale;
        bam.mode = s.mode;
        bam.rng = s.rng ? &branch_rng : nullptr;
        bam.frozen_eps = s.frozen_eps;
        if (have_knowledge) {
            bam.has_knowledge = true;
            bam.knowledge_logits = matmul(i_q_soft, transpose(i_k_soft));
        }
        if (p.has_key_scorer) {
            bam.has_key_scorer = true;
            bam.key_scorer = p.key_scorer;
        }
    }
    AttentionOutput att = multi_head_attention(q_side, kv_side, p.att, s.heads,
                                               need_bam ? &bam : nullptr);
    // Post-norm transformer encoder wiring: the attention output is added
    // to the branch's own Q-side input, then normalized; same around the
    // feed-forward sublayer.
    Var h1 = layernorm(add(q_side, att.out), p.ln1.gain, p.ln1.bias);
    bool training = s.mode == Mode::Train;
    Rng drop_rng = branch_rng.substream(0xd0);
    Var hidden = relu(add_rowvec(matmul(h1, p.ffn.w1), p.ffn.b1));
    hidden = dropout(hidden, s.dropout_p, drop_rng, training);
    Var ff = add_rowvec(matmul(hidden, p.ffn.w2), p.ffn.b2);
    ff = dropout(ff, s.dropout_p, drop_rng, training);
    Var out = layernorm(add(h1, ff), p.ln2.gain, p.ln2.bias);
    return BranchResult{out, att.has_kl, att.kl};
}

} // namespace detail

inline CoattOutput coattention_block(Var u_text, Var u_speech, const CoattBlockVars& p,
                                     const CoattSettings& s,
                                     const CoattKnowledge* knowledge = nullptr) {
    bool have_k = knowledge != nullptr;
    if (s.variant == Variant::Bam && s.prior_source == PriorSource::Knowledge && !have_k)
        throw ConfigError("coattention_block: knowledge required for prior_source=knowledge");
    if (s.hard_knowledge && !have_k)
        throw ConfigError("coattention_block: knowledge required for hard_knowledge");
    Var it, is;
    if (have_k) {
        it = knowledge->i_text_soft;
        is = knowledge->i_speech_soft;
    }
    auto tb = detail::coatt_branch(u_text, u_speech, p.text, s, have_k, it, is, 0x7431);
    auto sb = detail::coatt_branch(u_speech, u_text, p.speech, s, have_k, is, it, 0x7732);
    CoattOutput out;
    out.text = tb.out;
    out.speech = sb.out;
    if (tb.has_kl) {
        out.kl = scale(add(tb.kl, sb.kl), 0.5);
        out.has_kl = true;
    }
    return out;
}

/// Mean of the two branches: average-pool each branch over positions,
/// then average the pooled vectors -> [1 x d].
inline Var fuse(Var text_out, Var speech_out) {
    return scale(add(mean_rows(text_out), mean_rows(speech_out)), 0.5);
}

} // namespace kbca
