#pragma once

#include <cmath>
#include <tuple>
#include <vector>

#include "kbca/bam.hpp"
#include "kbca/config.hpp"
#include "kbca/tape.hpp"

namespace kbca {

/// Projection parameters of one attention module, bound to a tape.
/// W1/b1 -> Q, W2/b2 -> K, W3/b3 -> V, Wo/bo -> output mixing after
/// head concatenation.
struct AttentionVars {
    Var w1, b1, w2, b2, w3, b3, wo, bo;
};

/// Settings for the stochastic (BAM) attention path inside one module.
struct BamSettings {
    Variant variant = Variant::Det;
    bool hard_knowledge = false;
    PriorSource prior_source = PriorSource::Knowledge;
    double weibull_k = 1.0;
    double gamma_beta = 10.0;
    double alpha_scale = 1.0;
    Mode mode = Mode::Infer;
    Rng* rng = nullptr;
    const Tensor* frozen_eps = nullptr; // test hook: fixed noise for gradient checks

    // Outer product of softened query/key intensities, pre-softmax
    // [n_q x n_k]; required for prior_source == Knowledge or hard_knowledge.
    bool has_knowledge = false;
    Var knowledge_logits;

    // Learned key scorer [d x 1]; required for prior_source == Key.
    bool has_key_scorer = false;
    Var key_scorer;
};

struct AttentionOutput {
    Var out;
    std::vector<Var> maps; // per-head row-stochastic maps actually applied to V
    bool has_kl = false;
    Var kl; // mean KL across heads, present only on the BAM path
};

/// Affine Q/K/V projections (full model dimension, before head split).
inline std::tuple<Var, Var, Var> project_qkv(Var u, const AttentionVars& p) {
    Var q = add_rowvec(matmul(u, p.w1), p.b1);
    Var k = add_rowvec(matmul(u, p.w2), p.b2);
    Var v = add_rowvec(matmul(u, p.w3), p.b3);
    return {q, k, v};
}

/// Row-softmax of Q Khat^T / sqrt(d_h). `key_mask`, when given, marks
/// padded keys: masked logits get -1e30 so their weight underflows to 0.
inline Var attention_map(Var qh, Var kh, const std::vector<bool>* key_mask = nullptr) {
    std::size_t dh = qh.tape->value(qh).cols();
    if (dh != kh.tape->value(kh).cols()) throw ShapeError("attention_map: head dim mismatch");
    Var logits = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (key_mask) {
        const Tensor& lv = logits.tape->value(logits);
        if (key_mask->size() != lv.cols()) throw ShapeError("attention_map: mask length mismatch");
        Tensor m(lv.shape());
        for (std::size_t i = 0; i < lv.rows(); ++i)
            for (std::size_t j = 0; j < lv.cols(); ++j)
                m(i, j) = (*key_mask)[j] ? -1e30 : 0.0;
        logits = add_const(logits, m);
    }
    return softmax_rows(logits);
}

/// Multi-head attention; self-attention when q_in and kv_in coincide,
/// cross-attention otherwise. The BAM path replaces each head's map by a
/// normalized Weibull sample (training) or its posterior expectation
/// (inference) and accumulates the KL toward the Gamma prior.
inline AttentionOutput multi_head_attention(Var q_in, Var kv_in, const AttentionVars& p,
                                            std::size_t heads,
                                            const BamSettings* bam = nullptr,
                                            const std::vector<bool>* key_mask = nullptr) {
    Tape& t = *q_in.tape;
    std::size_t d = t.value(q_in).cols();
    if (heads == 0 || d % heads != 0)
        throw ShapeError("multi_head_attention: d must be a multiple of heads");
    std::size_t dh = d / heads;

    Var q = add_rowvec(matmul(q_in, p.w1), p.b1);
    Var k = add_rowvec(matmul(kv_in, p.w2), p.b2);
    Var v = add_rowvec(matmul(kv_in, p.w3), p.b3);

    bool use_bam = bam && bam->variant == Variant::Bam;
    bool hard = bam && bam->hard_knowledge;
    if ((hard || (use_bam && bam->prior_source == PriorSource::Knowledge)) && !bam->has_knowledge)
        throw ConfigError("multi_head_attention: knowledge intensities required but missing");
    if (use_bam && bam->prior_source == PriorSource::Key && !bam->has_key_scorer)
        throw ConfigError("multi_head_attention: key-prior scorer missing");

    // Prior concentration, shared across heads.
    Var alpha;
    bool has_alpha = false;
    if (use_bam) {
        std::size_t nq = t.value(q).rows(), nk = t.value(k).rows();
        if (bam->prior_source == PriorSource::Knowledge) {
            alpha = gamma_alpha(softmax_rows(bam->knowledge_logits), bam->alpha_scale);
        } else if (bam->prior_source == PriorSource::Key) {
            Var scores = transpose(matmul(k, bam->key_scorer)); // [1 x n_k]
            alpha = gamma_alpha(broadcast_rows(softmax_rows(scores), nq), bam->alpha_scale);
        } else {
            Tensor uni = Tensor::full({nq, nk}, bam->alpha_scale);
            alpha = t.leaf(uni, false);
        }
        has_alpha = true;
    }

    AttentionOutput res;
    std::vector<Var> head_outs;
    Var kl_sum;
    bool have_kl = false;
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(v, h * dh, (h + 1) * dh);
        Var logits = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (hard) logits = add(logits, bam->knowledge_logits);
        if (key_mask) {
            const Tensor& lv = t.value(logits);
            Tensor m(lv.shape());
            for (std::size_t i = 0; i < lv.rows(); ++i)
                for (std::size_t j = 0; j < lv.cols(); ++j)
                    m(i, j) = (*key_mask)[j] ? -1e30 : 0.0;
            logits = add_const(logits, m);
        }
        Var map = softmax_rows(logits);
        if (use_bam) {
            Var lam = weibull_lambda(map, bam->weibull_k);
            Var kl = kl_weibull_gamma(lam, alpha, bam->weibull_k, bam->gamma_beta);
            kl_sum = have_kl ? add(kl_sum, kl) : kl;
            have_kl = true;
            Rng head_rng = bam->rng ? bam->rng->substream(0x6261 + h) : Rng(0);
            map = bam_attention(map, bam->mode, bam->weibull_k,
                                bam->rng ? &head_rng : nullptr, bam->frozen_eps);
        }
        res.maps.push_back(map);
        head_outs.push_back(matmul(map, vh));
    }
    (void)has_alpha;
    Var cat = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    res.out = add_rowvec(matmul(cat, p.wo), p.bo);
    if (have_kl) {
        res.kl = scale(kl_sum, 1.0 / static_cast<double>(heads));
        res.has_kl = true;
    }
    return res;
}

/// Per-modality sequence processing; returns the processed embeddings and
/// the per-head maps for downstream knowledge softening.
inline AttentionOutput self_attention(Var u, const AttentionVars& p, std::size_t heads,
                                      const std::vector<bool>* key_mask = nullptr) {
    return multi_head_attention(u, u, p, heads, nullptr, key_mask);
}

/// Head-averaged map (row-stochastic as a convex combination of
/// row-stochastic maps), the single map used in knowledge softening.
inline Var mean_map(const std::vector<Var>& maps) {
    if (maps.empty()) throw ShapeError("mean_map: empty");
    Var acc = maps[0];
    for (std::size_t i = 1; i < maps.size(); ++i) acc = add(acc, maps[i]);
    return scale(acc, 1.0 / static_cast<double>(maps.size()));
}

} // namespace kbca
