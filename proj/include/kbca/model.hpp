#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbca/alignment.hpp"
#include "kbca/coattention.hpp"
#include "kbca/config.hpp"
#include "kbca/lexicon.hpp"

namespace kbca {

/// Named parameter tensors in a stable declaration order, so iteration,
/// serialization, and optimizer state are deterministic.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(init));
        return items_.back().second;
    }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return items_[it->second].second;
    }

    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return items_.size(); }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

/// One dataset item as the model consumes it. Embeddings may carry several
/// encoder layers; a single layer is the common case.
struct Item {
    std::string utt;
    std::vector<Tensor> text_layers;   // each [n_t x d]
    std::vector<Tensor> speech_layers; // each [F x d], frame level
    std::vector<std::string> tokens;   // word sequence, 1:1 with alignment
    AlignmentSpec align;
    int label = -1;
};

struct Prediction {
    std::vector<double> probs;
    std::size_t label = 0;
};

struct ForwardResult {
    Var logits;
    bool has_kl = false;
    Var kl;
    Prediction prediction;
    double kl_value = 0.0;
    // Parameter leaves touched by this pass: (store index, tape leaf).
    std::vector<std::pair<std::size_t, Var>> bound_params;
};

namespace detail {

inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor w({fan_in, fan_out});
    double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& x : w.data()) x = (2.0 * rng.uniform() - 1.0) * s;
    return w;
}

} // namespace detail

/// Full classifier: per-modality self-attention, optional learned layer
/// averaging, knowledge softening, co-attention fusion (deterministic or
/// Bayesian), pooling, and an affine classifier head.
class EmotionModel {
public:
    ModelConfig cfg;
    ParamStore params;

    EmotionModel() = default;
    explicit EmotionModel(ModelConfig c) : cfg(std::move(c)) { cfg.validate(); }

    void init(Rng rng) {
        std::size_t d = cfg.d;
        auto add_attention = [&](const std::string& prefix) {
            params.add(prefix + ".w1", detail::glorot(d, d, rng));
            params.add(prefix + ".b1", Tensor::zeros({d}));
            params.add(prefix + ".w2", detail::glorot(d, d, rng));
            params.add(prefix + ".b2", Tensor::zeros({d}));
            params.add(prefix + ".w3", detail::glorot(d, d, rng));
            params.add(prefix + ".b3", Tensor::zeros({d}));
            params.add(prefix + ".wo", detail::glorot(d, d, rng));
            params.add(prefix + ".bo", Tensor::zeros({d}));
        };
        bool text_on = cfg.modality != Modality::Speech;
        bool speech_on = cfg.modality != Modality::Text;
        if (text_on) {
            add_attention("text_sa");
            if (cfg.text_layers > 1) params.add("text_layer_logits", Tensor::zeros({1, cfg.text_layers}));
        }
        if (speech_on) {
            add_attention("speech_sa");
            if (cfg.speech_layers > 1)
                params.add("speech_layer_logits", Tensor::zeros({1, cfg.speech_layers}));
        }
        if (cfg.soften_uses_separate_head) {
            if (text_on) add_attention("text_soften");
            if (speech_on) add_attention("speech_soften");
        }
        if (text_on && speech_on) {
            for (std::size_t l = 0; l < cfg.coattention_layers; ++l) {
                for (const char* br : {"t", "s"}) {
                    std::string prefix = "coatt." + std::to_string(l) + "." + br;
                    add_attention(prefix + ".att");
                    params.add(prefix + ".ffn.w1", detail::glorot(d, 4 * d, rng));
                    params.add(prefix + ".ffn.b1", Tensor::zeros({4 * d}));
                    params.add(prefix + ".ffn.w2", detail::glorot(4 * d, d, rng));
                    params.add(prefix + ".ffn.b2", Tensor::zeros({d}));
                    params.add(prefix + ".ln1.gain", Tensor::full({d}, 1.0));
                    params.add(prefix + ".ln1.bias", Tensor::zeros({d}));
                    params.add(prefix + ".ln2.gain", Tensor::full({d}, 1.0));
                    params.add(prefix + ".ln2.bias", Tensor::zeros({d}));
                    if (cfg.variant == Variant::Bam && cfg.prior_source == PriorSource::Key)
                        params.add(prefix + ".prior_w", detail::glorot(d, 1, rng));
                }
            }
        }
        for (std::size_t l = 0; l < cfg.classifier_depth; ++l) {
            std::size_t out = l + 1 == cfg.classifier_depth ? cfg.n_classes : d;
            params.add("clf." + std::to_string(l) + ".w", detail::glorot(d, out, rng));
            params.add("clf." + std::to_string(l) + ".b", Tensor::zeros({out}));
        }
    }

    /// Runs the full pipeline on one item. `rng` feeds dropout and the
    /// Weibull draws; `frozen_eps` overrides the draws for gradient checks.
    ForwardResult forward(Tape& tape, const Item& item, const LexiconTable& lex, Mode mode,
                          Rng* rng = nullptr, const Tensor* frozen_eps = nullptr) const {
        bool text_on = cfg.modality != Modality::Speech;
        bool speech_on = cfg.modality != Modality::Text;
        bool training = mode == Mode::Train;
        ForwardResult res;
        auto bind = [&](const std::string& name) {
            Var v = tape.leaf(params.at(name), true);
            res.bound_params.emplace_back(params.index_of(name), v);
            return v;
        };
        auto bind_att = [&](const std::string& prefix) {
            AttentionVars a;
            a.w1 = bind(prefix + ".w1");
            a.b1 = bind(prefix + ".b1");
            a.w2 = bind(prefix + ".w2");
            a.b2 = bind(prefix + ".b2");
            a.w3 = bind(prefix + ".w3");
            a.b3 = bind(prefix + ".b3");
            a.wo = bind(prefix + ".wo");
            a.bo = bind(prefix + ".bo");
            return a;
        };

        if (item.tokens.size() != item.align.segments.size())
            throw DataError("forward: token count " + std::to_string(item.tokens.size()) +
                            " does not match alignment segment count " +
                            std::to_string(item.align.segments.size()));

        Rng base_rng = rng ? *rng : Rng(cfg.seed);

        // Modality inputs.
        Var u_text, u_speech;
        if (text_on) {
            if (item.text_layers.empty()) throw DataError("forward: no text embeddings");
            if (item.text_layers.size() != cfg.text_layers)
                throw DataError("forward: text layer count mismatch");
            u_text = cfg.text_layers > 1
                         ? layer_average(item.text_layers, bind("text_layer_logits"))
                         : tape.leaf(item.text_layers[0], false);
            if (tape.value(u_text).cols() != cfg.d) throw DataError("forward: text dim mismatch");
        }
        if (speech_on) {
            if (item.speech_layers.empty()) throw DataError("forward: no speech embeddings");
            if (item.speech_layers.size() != cfg.speech_layers)
                throw DataError("forward: speech layer count mismatch");
            Var frames = cfg.speech_layers > 1
                             ? layer_average(item.speech_layers, bind("speech_layer_logits"))
                             : tape.leaf(item.speech_layers[0], false);
            if (tape.value(frames).cols() != cfg.d) throw DataError("forward: speech dim mismatch");
            u_speech = pool_words(frames, item.align);
        }

        // Per-modality self-attention; maps feed the knowledge softening.
        AttentionOutput sa_text, sa_speech;
        if (text_on) sa_text = self_attention(u_text, bind_att("text_sa"), cfg.heads);
        if (speech_on) sa_speech = self_attention(u_speech, bind_att("speech_sa"), cfg.heads);

        Var pooled;

        if (text_on && speech_on) {
            bool need_knowledge = (cfg.variant == Variant::Bam &&
                                   cfg.prior_source == PriorSource::Knowledge) ||
                                  cfg.hard_knowledge;
            CoattKnowledge knowledge;
            if (need_knowledge) {
                if (tape.value(sa_text.out).rows() != item.tokens.size())
                    throw DataError("forward: text length does not match token count");
                std::vector<double> i_vals = intensity(item.tokens, lex);
                Var i_leaf = tape.leaf(Tensor::column(i_vals), false);
                Var map_t = cfg.soften_uses_separate_head
                                ? mean_map(self_attention(u_text, bind_att("text_soften"), cfg.heads).maps)
                                : mean_map(sa_text.maps);
                Var map_s = cfg.soften_uses_separate_head
                                ? mean_map(self_attention(u_speech, bind_att("speech_soften"), cfg.heads).maps)
                                : mean_map(sa_speech.maps);
                knowledge.i_text_soft = matmul(map_t, i_leaf);
                knowledge.i_speech_soft = matmul(map_s, i_leaf);
            }

            CoattSettings cs;
            cs.heads = cfg.heads;
            cs.variant = cfg.variant;
            cs.hard_knowledge = cfg.hard_knowledge;
            cs.prior_source = cfg.prior_source;
            cs.weibull_k = cfg.weibull_k;
            cs.gamma_beta = cfg.gamma_beta;
            cs.alpha_scale = cfg.alpha_scale;
            cs.dropout_p = training ? cfg.dropout : 0.0;
            cs.mode = mode;
            cs.frozen_eps = frozen_eps;

            Var out_t = sa_text.out, out_s = sa_speech.out;
            Var kl_sum;
            bool have_kl = false;
            for (std::size_t l = 0; l < cfg.coattention_layers; ++l) {
                CoattBlockVars bp;
                for (int side = 0; side < 2; ++side) {
                    std::string prefix = "coatt." + std::to_string(l) + "." + (side == 0 ? "t" : "s");
                    CoattBranchVars& br = side == 0 ? bp.text : bp.speech;
                    br.att = bind_att(prefix + ".att");
                    br.ffn.w1 = bind(prefix + ".ffn.w1");
                    br.ffn.b1 = bind(prefix + ".ffn.b1");
                    br.ffn.w2 = bind(prefix + ".ffn.w2");
                    br.ffn.b2 = bind(prefix + ".ffn.b2");
                    br.ln1.gain = bind(prefix + ".ln1.gain");
                    br.ln1.bias = bind(prefix + ".ln1.bias");
                    br.ln2.gain = bind(prefix + ".ln2.gain");
                    br.ln2.bias = bind(prefix + ".ln2.bias");
                    if (params.has(prefix + ".prior_w")) {
                        br.has_key_scorer = true;
                        br.key_scorer = bind(prefix + ".prior_w");
                    }
                }
                Rng layer_rng = base_rng.substream(0xc0a7 + l);
                cs.rng = &layer_rng;
                CoattOutput co = coattention_block(out_t, out_s, bp, cs,
                                                   need_knowledge ? &knowledge : nullptr);
                out_t = co.text;
                out_s = co.speech;
                if (co.has_kl) {
                    kl_sum = have_kl ? add(kl_sum, co.kl) : co.kl;
                    have_kl = true;
                }
            }
            pooled = fuse(out_t, out_s);
            if (have_kl) {
                res.kl = scale(kl_sum, 1.0 / static_cast<double>(cfg.coattention_layers));
                res.has_kl = true;
            }
        } else {
            // Single-modality baseline: self-attention, pooling, classifier.
            pooled = mean_rows(text_on ? sa_text.out : sa_speech.out);
        }

        Var h = pooled;
        Rng clf_rng = base_rng.substream(0xc1f);
        for (std::size_t l = 0; l < cfg.classifier_depth; ++l) {
            if (l > 0) h = relu(h);
            if (training && l > 0) h = dropout(h, cfg.dropout, clf_rng, true);
            h = add_rowvec(matmul(h, bind("clf." + std::to_string(l) + ".w")),
                           bind("clf." + std::to_string(l) + ".b"));
        }
        res.logits = h;

        const Tensor& lv = tape.value(res.logits);
        std::vector<double> probs(lv.cols());
        double mx = lv(0, 0);
        for (std::size_t j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv(0, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < lv.cols(); ++j) {
            probs[j] = std::exp(lv(0, j) - mx);
            sum += probs[j];
        }
        std::size_t best = 0;
        for (std::size_t j = 0; j < lv.cols(); ++j) {
            probs[j] /= sum;
            if (probs[j] > probs[best]) best = j;
        }
        res.prediction = Prediction{std::move(probs), best};
        res.kl_value = res.has_kl ? tape.value(res.kl)[0] : 0.0;
        return res;
    }

    /// Cross-entropy plus weighted KL.
    Var loss(Tape& tape, const ForwardResult& fw, std::size_t label) const {
        Var ce = cross_entropy(fw.logits, label);
        if (fw.has_kl && cfg.kl_weight != 0.0) return add(ce, scale(fw.kl, cfg.kl_weight));
        (void)tape;
        return ce;
    }
};

// ---------------------------------------------------------------------------
// Metrics and score fusion
// ---------------------------------------------------------------------------

struct Metrics {
    double ua = 0.0; // mean per-class recall over classes with gold instances
    double wa = 0.0; // overall fraction correct
    std::vector<double> recalls;
    std::vector<std::vector<std::size_t>> confusion; // [gold][pred]
    std::vector<std::string> warnings;
};

inline Metrics compute_metrics(const std::vector<int>& preds, const std::vector<int>& golds,
                               std::size_t n_classes) {
    if (preds.empty() || preds.size() != golds.size())
        throw DataError("compute_metrics: empty or mismatched prediction/gold lists");
    Metrics m;
    m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (golds[i] < 0 || static_cast<std::size_t>(golds[i]) >= n_classes ||
            preds[i] < 0 || static_cast<std::size_t>(preds[i]) >= n_classes)
            throw DataError("compute_metrics: label out of range");
        m.confusion[golds[i]][preds[i]] += 1;
        if (preds[i] == golds[i]) ++correct;
    }
    m.wa = static_cast<double>(correct) / static_cast<double>(preds.size());
    m.recalls.assign(n_classes, 0.0);
    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t gold_count = 0;
        for (std::size_t p = 0; p < n_classes; ++p) gold_count += m.confusion[c][p];
        if (gold_count == 0) {
            m.warnings.push_back("class " + std::to_string(c) +
                                 " has no gold instances; excluded from UA");
            continue;
        }
        m.recalls[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(gold_count);
        recall_sum += m.recalls[c];
        ++present;
    }
    if (present == 0) throw DataError("compute_metrics: no class has gold instances");
    m.ua = recall_sum / static_cast<double>(present);
    return m;
}

/// Late score fusion: w*p1 + (1-w)*p2.
inline std::vector<double> fuse_scores(const std::vector<double>& p1, const std::vector<double>& p2,
                                       double w = 0.5) {
    if (p1.size() != p2.size() || p1.empty())
        throw DataError("fuse_scores: probability vectors must be nonempty and equal length");
    if (w < 0.0 || w > 1.0) throw ConfigError("fuse_scores: w must be in [0, 1]");
    auto check = [](const std::vector<double>& p) {
        double s = 0.0;
        for (double v : p) {
            if (v < 0.0 || !std::isfinite(v)) throw DataError("fuse_scores: invalid probability");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-6) throw DataError("fuse_scores: probabilities must sum to 1");
    };
    check(p1);
    check(p2);
    std::vector<double> out(p1.size());
    for (std::size_t i = 0; i < p1.size(); ++i) out[i] = w * p1[i] + (1.0 - w) * p2[i];
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "KBCA", version u32, length-prefixed config JSON,
// then named parameter blobs (name length, name, rank, dims, f64 LE data).
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("checkpoint: truncated u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw ParseError("checkpoint: truncated f64");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ParamStore& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_checkpoint: cannot open " + path);
    os.write("KBCA", 4);
    detail::write_u32(os, kCheckpointVersion);
    nlohmann::json j = cfg;
    std::string cfg_str = j.dump();
    detail::write_u32(os, static_cast<std::uint32_t>(cfg_str.size()));
    os.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params.items()) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(tensor.rank()));
        for (auto dim : tensor.shape()) detail::write_u32(os, static_cast<std::uint32_t>(dim));
        for (double v : tensor.data()) detail::write_f64(os, v);
    }
    if (!os) throw DataError("save_checkpoint: write failed for " + path);
}

inline std::pair<ModelConfig, ParamStore> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "KBCA", 4) != 0)
        throw ParseError("load_checkpoint: bad magic in " + path);
    std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw ParseError("load_checkpoint: unsupported version " + std::to_string(version));
    std::uint32_t cfg_len = detail::read_u32(is);
    std::string cfg_str(cfg_len, '\0');
    if (!is.read(cfg_str.data(), cfg_len)) throw ParseError("load_checkpoint: truncated config");
    ModelConfig cfg = nlohmann::json::parse(cfg_str).get<ModelConfig>();
    ParamStore params;
    std::uint32_t count = detail::read_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw ParseError("load_checkpoint: truncated name");
        std::uint32_t rank = detail::read_u32(is);
        std::vector<std::size_t> shape(rank);
        for (auto& dim : shape) dim = detail::read_u32(is);
        Tensor t(shape);
        for (auto& v : t.data()) v = detail::read_f64(is);
        params.add(name, std::move(t));
    }
    return {cfg, std::move(params)};
}

inline EmotionModel load_model(const std::string& path) {
    auto [cfg, params] = load_checkpoint(path);
    EmotionModel m(cfg);
    m.params = std::move(params);
    return m;
}

} // namespace kbca
