#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "kbca/errors.hpp"

namespace kbca {

enum class Variant { Det, Bam };
enum class PriorSource { Knowledge, Key, Uniform };
enum class Mode { Train, Infer };
enum class Modality { Both, Text, Speech };

inline std::string to_string(Variant v) { return v == Variant::Det ? "det" : "bam"; }
inline std::string to_string(PriorSource p) {
    switch (p) {
        case PriorSource::Knowledge: return "knowledge";
        case PriorSource::Key: return "key";
        default: return "uniform";
    }
}
inline std::string to_string(Modality m) {
    switch (m) {
        case Modality::Both: return "both";
        case Modality::Text: return "text";
        default: return "speech";
    }
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "det") return Variant::Det;
    if (s == "bam") return Variant::Bam;
    throw ConfigError("unknown variant '" + s + "' (expected det|bam)");
}
inline PriorSource prior_source_from_string(const std::string& s) {
    if (s == "knowledge") return PriorSource::Knowledge;
    if (s == "key") return PriorSource::Key;
    if (s == "uniform") return PriorSource::Uniform;
    throw ConfigError("unknown prior_source '" + s + "' (expected knowledge|key|uniform)");
}
inline Modality modality_from_string(const std::string& s) {
    if (s == "both") return Modality::Both;
    if (s == "text") return Modality::Text;
    if (s == "speech") return Modality::Speech;
    throw ConfigError("unknown modality '" + s + "' (expected both|text|speech)");
}

/// All model and training hyperparameters. Defaults are desk scale except
/// where a published setting exists (k, beta, dropout, lr, batch size,
/// patience), which are kept as-is.
struct ModelConfig {
    std::size_t d = 32;
    std::size_t heads = 4;
    std::size_t coattention_layers = 1;
    std::size_t n_classes = 4;
    std::size_t classifier_depth = 1;
    std::size_t text_layers = 1;   // encoder layers per modality; >1 enables
    std::size_t speech_layers = 1; // the learned layer average
    double weibull_k = 1.0;
    double gamma_beta = 10.0;
    double alpha_scale = 1.0;
    double kl_weight = 3.0;
    double dropout = 0.1;
    double lr = 1e-4;
    std::size_t batch_size = 32;
    std::size_t early_stop_patience = 6;
    std::size_t max_epochs = 30;
    std::string early_stop_metric = "ua"; // ua | loss
    std::uint64_t seed = 1;
    Variant variant = Variant::Det;
    PriorSource prior_source = PriorSource::Knowledge;
    bool hard_knowledge = false;
    bool soften_uses_separate_head = false;
    Modality modality = Modality::Both;

    void validate() const {
        if (d == 0 || heads == 0 || d % heads != 0)
            throw ConfigError("config: d must be a positive multiple of heads");
        if (n_classes < 2) throw ConfigError("config: n_classes must be >= 2");
        if (weibull_k <= 0.0 || gamma_beta <= 0.0 || alpha_scale <= 0.0)
            throw ConfigError("config: weibull_k, gamma_beta, alpha_scale must be > 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0, 1)");
        if (kl_weight < 0.0) throw ConfigError("config: kl_weight must be >= 0");
        if (batch_size == 0 || classifier_depth == 0 || coattention_layers == 0)
            throw ConfigError("config: batch_size, classifier_depth, coattention_layers must be >= 1");
        if (early_stop_metric != "ua" && early_stop_metric != "loss")
            throw ConfigError("config: early_stop_metric must be ua|loss");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{
        {"d", c.d},
        {"heads", c.heads},
        {"coattention_layers", c.coattention_layers},
        {"n_classes", c.n_classes},
        {"classifier_depth", c.classifier_depth},
        {"text_layers", c.text_layers},
        {"speech_layers", c.speech_layers},
        {"weibull_k", c.weibull_k},
        {"gamma_beta", c.gamma_beta},
        {"alpha_scale", c.alpha_scale},
        {"kl_weight", c.kl_weight},
        {"dropout", c.dropout},
        {"lr", c.lr},
        {"batch_size", c.batch_size},
        {"early_stop_patience", c.early_stop_patience},
        {"max_epochs", c.max_epochs},
        {"early_stop_metric", c.early_stop_metric},
        {"seed", c.seed},
        {"variant", to_string(c.variant)},
        {"prior_source", to_string(c.prior_source)},
        {"hard_knowledge", c.hard_knowledge},
        {"soften_uses_separate_head", c.soften_uses_separate_head},
        {"modality", to_string(c.modality)},
    };
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig def;
    c = def;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("d", c.d);
    get("heads", c.heads);
    get("coattention_layers", c.coattention_layers);
    get("n_classes", c.n_classes);
    get("classifier_depth", c.classifier_depth);
    get("text_layers", c.text_layers);
    get("speech_layers", c.speech_layers);
    get("weibull_k", c.weibull_k);
    get("gamma_beta", c.gamma_beta);
    get("alpha_scale", c.alpha_scale);
    get("kl_weight", c.kl_weight);
    get("dropout", c.dropout);
    get("lr", c.lr);
    get("batch_size", c.batch_size);
    get("early_stop_patience", c.early_stop_patience);
    get("max_epochs", c.max_epochs);
    get("early_stop_metric", c.early_stop_metric);
    get("seed", c.seed);
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("prior_source"))
        c.prior_source = prior_source_from_string(j.at("prior_source").get<std::string>());
    get("hard_knowledge", c.hard_knowledge);
    get("soften_uses_separate_head", c.soften_uses_separate_head);
    if (j.contains("modality")) c.modality = modality_from_string(j.at("modality").get<std::string>());
    if (j.contains("preset")) {
        std::string p = j.at("preset").get<std::string>();
        if (p == "paper-scale") {
            // 768-dim embeddings, 12 encoder layers, as used with the
            // pre-trained extractors; everything else stays configurable.
            if (!j.contains("d")) c.d = 768;
            if (!j.contains("heads")) c.heads = 8;
            if (!j.contains("text_layers")) c.text_layers = 12;
            if (!j.contains("speech_layers")) c.speech_layers = 12;
        } else if (p != "desk-scale") {
            throw ConfigError("unknown preset '" + p + "'");
        }
    }
    c.validate();
}

} // namespace kbca
