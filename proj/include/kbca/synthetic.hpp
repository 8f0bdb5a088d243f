#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbca/dataset.hpp"
#include "kbca/rng.hpp"

namespace kbca {

/// Generator parameters for the desk-scale synthetic corpus. The class
/// label is planted only on "emotional" token positions: those tokens get
/// class-dependent embedding offsets and nonzero VAD lexicon entries,
/// filler tokens get neither. The text offset separates class pairs
/// {0,1} vs {2,3} and the speech offset separates within pairs, so either
/// modality alone caps near 50% accuracy while fusion can reach 100%.
struct SyntheticSpec {
    std::size_t n_classes = 4;
    std::size_t d = 32;
    std::size_t n_items = 2500;
    std::size_t emotional_vocab = 40;
    std::size_t filler_vocab = 80;
    double emotional_fraction = 0.3;
    double signal_strength = 0.7;
    double noise_scale = 0.7;
    std::size_t min_words = 8;
    std::size_t max_words = 24;
    std::size_t min_frames_per_word = 2;
    std::size_t max_frames_per_word = 6;
    std::size_t n_layers = 1;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_classes < 2 || n_classes % 2 != 0)
            throw ConfigError("SyntheticSpec: n_classes must be an even number >= 2");
        if (d == 0 || n_items == 0 || emotional_vocab == 0 || filler_vocab == 0 || n_layers == 0)
            throw ConfigError("SyntheticSpec: extents must be positive");
        if (emotional_fraction <= 0.0 || emotional_fraction > 1.0)
            throw ConfigError("SyntheticSpec: emotional_fraction must be in (0, 1]");
        if (signal_strength < 0.0 || noise_scale < 0.0)
            throw ConfigError("SyntheticSpec: signal/noise must be >= 0");
        if (min_words == 0 || max_words < min_words)
            throw ConfigError("SyntheticSpec: bad word count range");
        if (min_frames_per_word == 0 || max_frames_per_word < min_frames_per_word)
            throw ConfigError("SyntheticSpec: bad frames-per-word range");
    }
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = nlohmann::json{
        {"n_classes", s.n_classes},
        {"d", s.d},
        {"n_items", s.n_items},
        {"emotional_vocab", s.emotional_vocab},
        {"filler_vocab", s.filler_vocab},
        {"emotional_fraction", s.emotional_fraction},
        {"signal_strength", s.signal_strength},
        {"noise_scale", s.noise_scale},
        {"min_words", s.min_words},
        {"max_words", s.max_words},
        {"min_frames_per_word", s.min_frames_per_word},
        {"max_frames_per_word", s.max_frames_per_word},
        {"n_layers", s.n_layers},
        {"seed", s.seed},
    };
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    SyntheticSpec def;
    s = def;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("n_classes", s.n_classes);
    get("d", s.d);
    get("n_items", s.n_items);
    get("emotional_vocab", s.emotional_vocab);
    get("filler_vocab", s.filler_vocab);
    get("emotional_fraction", s.emotional_fraction);
    get("signal_strength", s.signal_strength);
    get("noise_scale", s.noise_scale);
    get("min_words", s.min_words);
    get("max_words", s.max_words);
    get("min_frames_per_word", s.min_frames_per_word);
    get("max_frames_per_word", s.max_frames_per_word);
    get("n_layers", s.n_layers);
    get("seed", s.seed);
    s.validate();
}

namespace detail {

inline std::vector<double> random_unit_vector(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    double norm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

} // namespace detail

/// Generated corpus held in memory; gen_synthetic writes it to disk.
struct SyntheticCorpus {
    std::vector<EmbeddingItem> text, speech;
    std::vector<AlignmentSpec> aligns;
    std::vector<std::pair<std::string, std::vector<std::string>>> tokens;
    std::vector<std::pair<std::string, int>> labels;
    std::vector<std::string> lexicon_lines; // TSV payload rows
};

inline SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng root(spec.seed, 0x5f4e);

    // Vocabulary: base embeddings per token, VAD entries for emotional ones.
    Rng vocab_rng = root.substream(1);
    std::size_t vocab = spec.emotional_vocab + spec.filler_vocab;
    std::vector<std::vector<double>> base_text(vocab), base_speech(vocab);
    for (std::size_t t = 0; t < vocab; ++t) {
        base_text[t].resize(spec.d);
        base_speech[t].resize(spec.d);
        for (auto& x : base_text[t]) x = 0.5 * vocab_rng.normal();
        for (auto& x : base_speech[t]) x = 0.5 * vocab_rng.normal();
    }
    auto token_name = [&](std::size_t t) {
        return t < spec.emotional_vocab ? "emo" + std::to_string(t)
                                        : "fill" + std::to_string(t - spec.emotional_vocab);
    };

    SyntheticCorpus out;
    Rng lex_rng = root.substream(2);
    char buf[128];
    for (std::size_t t = 0; t < spec.emotional_vocab; ++t) {
        double v = (0.5 + 0.3 * lex_rng.uniform()) * (lex_rng.uniform() < 0.5 ? -1.0 : 1.0);
        double a = (0.5 + 0.3 * lex_rng.uniform()) * (lex_rng.uniform() < 0.5 ? -1.0 : 1.0);
        double dm = (0.5 + 0.3 * lex_rng.uniform()) * (lex_rng.uniform() < 0.5 ? -1.0 : 1.0);
        std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.4f\t%.4f", token_name(t).c_str(), v, a, dm);
        out.lexicon_lines.emplace_back(buf);
    }

    // Class signal directions: one shared text axis splitting class pairs,
    // one shared speech axis splitting within pairs.
    Rng dir_rng = root.substream(3);
    std::vector<double> g_text = detail::random_unit_vector(spec.d, dir_rng);
    std::vector<double> g_speech = detail::random_unit_vector(spec.d, dir_rng);

    for (std::size_t n = 0; n < spec.n_items; ++n) {
        Rng item_rng = root.substream(100 + n);
        std::string utt = "utt" + std::to_string(n);
        int label = static_cast<int>(item_rng.below(spec.n_classes));
        double text_sign = label < static_cast<int>(spec.n_classes) / 2 ? 1.0 : -1.0;
        double speech_sign = label % 2 == 0 ? 1.0 : -1.0;

        std::size_t n_words =
            spec.min_words + item_rng.below(spec.max_words - spec.min_words + 1);
        std::vector<std::string> toks;
        std::vector<std::size_t> tok_ids;
        std::vector<bool> emotional(n_words, false);
        for (std::size_t w = 0; w < n_words; ++w) {
            bool emo = item_rng.uniform() < spec.emotional_fraction;
            if (w == 0 && spec.emotional_fraction > 0.0) emo = true; // plant at least one
            emotional[w] = emo;
            std::size_t tid = emo ? item_rng.below(spec.emotional_vocab)
                                  : spec.emotional_vocab + item_rng.below(spec.filler_vocab);
            tok_ids.push_back(tid);
            toks.push_back(token_name(tid));
        }

        EmbeddingItem te, se;
        te.id = se.id = utt;
        AlignmentSpec align;
        align.utt = utt;
        std::size_t frame = 0;
        std::vector<std::size_t> frames_per_word(n_words);
        for (std::size_t w = 0; w < n_words; ++w) {
            frames_per_word[w] = spec.min_frames_per_word +
                                 item_rng.below(spec.max_frames_per_word - spec.min_frames_per_word + 1);
            align.segments.push_back(
                {toks[w], frame, frame + frames_per_word[w]});
            frame += frames_per_word[w];
        }
        std::size_t total_frames = frame;

        for (std::size_t layer = 0; layer < spec.n_layers; ++layer) {
            Rng lrng = item_rng.substream(10 + layer);
            Tensor tx({n_words, spec.d});
            for (std::size_t w = 0; w < n_words; ++w) {
                for (std::size_t j = 0; j < spec.d; ++j) {
                    double v = base_text[tok_ids[w]][j] + spec.noise_scale * lrng.normal();
                    if (emotional[w]) v += spec.signal_strength * text_sign * g_text[j];
                    tx(w, j) = v;
                }
            }
            te.layers.push_back(std::move(tx));

            Tensor sx({total_frames, spec.d});
            std::size_t f0 = 0;
            for (std::size_t w = 0; w < n_words; ++w) {
                std::vector<double> word_emb(spec.d);
                for (std::size_t j = 0; j < spec.d; ++j) {
                    word_emb[j] = base_speech[tok_ids[w]][j] + spec.noise_scale * lrng.normal();
                    if (emotional[w]) word_emb[j] += spec.signal_strength * speech_sign * g_speech[j];
                }
                for (std::size_t f = 0; f < frames_per_word[w]; ++f)
                    for (std::size_t j = 0; j < spec.d; ++j)
                        sx(f0 + f, j) = word_emb[j] + 0.5 * spec.noise_scale * lrng.normal();
                f0 += frames_per_word[w];
            }
            se.layers.push_back(std::move(sx));
        }

        out.text.push_back(std::move(te));
        out.speech.push_back(std::move(se));
        out.aligns.push_back(std::move(align));
        out.tokens.emplace_back(utt, std::move(toks));
        out.labels.emplace_back(utt, label);
    }
    return out;
}

/// Writes the corpus plus a meta.json echo of the spec. Seed-deterministic
/// and byte-identical across runs.
inline void gen_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    SyntheticCorpus corpus = make_synthetic(spec);
    std::filesystem::create_directories(out_dir);
    write_embeddings(out_dir + "/text.emb", corpus.text);
    write_embeddings(out_dir + "/speech.emb", corpus.speech);

    auto open = [&](const std::string& name) {
        std::ofstream os(out_dir + "/" + name, std::ios::binary);
        if (!os) throw DataError("gen_synthetic: cannot open " + out_dir + "/" + name);
        return os;
    };
    {
        auto os = open("align.jsonl");
        for (const auto& a : corpus.aligns) {
            nlohmann::json words = nlohmann::json::array();
            for (const auto& s : a.segments)
                words.push_back({s.word, s.start_frame, s.end_frame});
            os << nlohmann::json{{"utt", a.utt}, {"words", words}}.dump() << '\n';
        }
    }
    {
        auto os = open("tokens.jsonl");
        for (const auto& [utt, toks] : corpus.tokens)
            os << nlohmann::json{{"utt", utt}, {"tokens", toks}}.dump() << '\n';
    }
    {
        auto os = open("labels.jsonl");
        for (const auto& [utt, label] : corpus.labels)
            os << nlohmann::json{{"utt", utt}, {"label", label}}.dump() << '\n';
    }
    {
        auto os = open("lexicon.tsv");
        os << "word\tvalence\tarousal\tdominance\n";
        for (const auto& line : corpus.lexicon_lines) os << line << '\n';
    }
    {
        auto os = open("meta.json");
        nlohmann::json j = spec;
        os << j.dump(2) << '\n';
    }
}

} // namespace kbca
