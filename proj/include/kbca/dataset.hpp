#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbca/model.hpp"
#include "kbca/rng.hpp"

namespace kbca {

/// One utterance's embedding stack as stored in an EMB1 file.
struct EmbeddingItem {
    std::string id;
    std::vector<Tensor> layers; // identical [rows x cols] shapes
};

inline constexpr std::uint32_t kEmbVersion = 1;

namespace detail {

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("EMB1: truncated f32");
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

} // namespace detail

inline void write_embeddings(const std::string& path, const std::vector<EmbeddingItem>& items) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_embeddings: cannot open " + path);
    os.write("EMB1", 4);
    detail::write_u32(os, kEmbVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(items.size()));
    for (const auto& it : items) {
        detail::write_u32(os, static_cast<std::uint32_t>(it.id.size()));
        os.write(it.id.data(), static_cast<std::streamsize>(it.id.size()));
        if (it.layers.empty()) throw DataError("write_embeddings: item without layers");
        detail::write_u32(os, static_cast<std::uint32_t>(it.layers.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(it.layers[0].rows()));
        detail::write_u32(os, static_cast<std::uint32_t>(it.layers[0].cols()));
        for (const auto& layer : it.layers) {
            require_same_shape(layer, it.layers[0], "write_embeddings");
            for (double v : layer.data()) detail::write_f32(os, static_cast<float>(v));
        }
    }
    if (!os) throw DataError("write_embeddings: write failed for " + path);
}

inline std::vector<EmbeddingItem> read_embeddings(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("read_embeddings: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "EMB1", 4) != 0)
        throw ParseError("read_embeddings: bad magic in " + path);
    std::uint32_t version = detail::read_u32(is);
    if (version != kEmbVersion)
        throw ParseError("read_embeddings: unsupported version " + std::to_string(version));
    std::uint32_t n = detail::read_u32(is);
    std::vector<EmbeddingItem> items;
    items.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        EmbeddingItem it;
        std::uint32_t id_len = detail::read_u32(is);
        it.id.resize(id_len);
        if (!is.read(it.id.data(), id_len)) throw ParseError("read_embeddings: truncated id");
        std::uint32_t n_layers = detail::read_u32(is);
        std::uint32_t rows = detail::read_u32(is);
        std::uint32_t cols = detail::read_u32(is);
        if (n_layers == 0 || rows == 0 || cols == 0)
            throw ParseError("read_embeddings: zero extent in item '" + it.id + "'");
        for (std::uint32_t l = 0; l < n_layers; ++l) {
            Tensor t({rows, cols});
            for (auto& v : t.data()) v = static_cast<double>(detail::read_f32(is));
            it.layers.push_back(std::move(t));
        }
        items.push_back(std::move(it));
    }
    return items;
}

// ---------------------------------------------------------------------------
// JSON-lines sidecars
// ---------------------------------------------------------------------------

inline std::vector<AlignmentSpec> read_alignments(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("read_alignments: cannot open " + path);
    std::vector<AlignmentSpec> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("read_alignments: line " + std::to_string(lineno) + ": " + e.what());
        }
        AlignmentSpec spec;
        spec.utt = j.at("utt").get<std::string>();
        for (const auto& w : j.at("words")) {
            if (!w.is_array() || w.size() != 3)
                throw ParseError("read_alignments: line " + std::to_string(lineno) +
                                 ": word entry must be [token, start, end]");
            AlignedWord aw;
            aw.word = w[0].get<std::string>();
            long long s = w[1].get<long long>(), e = w[2].get<long long>();
            if (s < 0 || e <= s)
                throw ParseError("read_alignments: line " + std::to_string(lineno) +
                                 ": invalid frame range");
            aw.start_frame = static_cast<std::size_t>(s);
            aw.end_frame = static_cast<std::size_t>(e);
            spec.segments.push_back(aw);
        }
        out.push_back(std::move(spec));
    }
    return out;
}

inline std::map<std::string, int> read_labels(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("read_labels: cannot open " + path);
    std::map<std::string, int> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("read_labels: line " + std::to_string(lineno) + ": " + e.what());
        }
        out[j.at("utt").get<std::string>()] = j.at("label").get<int>();
    }
    return out;
}

inline std::map<std::string, std::vector<std::string>> read_tokens(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("read_tokens: cannot open " + path);
    std::map<std::string, std::vector<std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("read_tokens: line " + std::to_string(lineno) + ": " + e.what());
        }
        out[j.at("utt").get<std::string>()] = j.at("tokens").get<std::vector<std::string>>();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly and deterministic splitting
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<Item> items;
};

/// Loads a dataset directory (text.emb, speech.emb, align.jsonl,
/// tokens.jsonl, labels.jsonl) into memory and validates cross-file
/// consistency.
inline Dataset load_dataset(const std::string& dir) {
    auto text = read_embeddings(dir + "/text.emb");
    auto speech = read_embeddings(dir + "/speech.emb");
    auto aligns = read_alignments(dir + "/align.jsonl");
    auto tokens = read_tokens(dir + "/tokens.jsonl");
    auto labels = read_labels(dir + "/labels.jsonl");
    if (text.size() != speech.size() || text.size() != aligns.size())
        throw DataError("load_dataset: item count mismatch across files");
    std::map<std::string, std::size_t> speech_idx, align_idx;
    for (std::size_t i = 0; i < speech.size(); ++i) speech_idx[speech[i].id] = i;
    for (std::size_t i = 0; i < aligns.size(); ++i) align_idx[aligns[i].utt] = i;

    Dataset ds;
    ds.items.reserve(text.size());
    for (auto& te : text) {
        auto si = speech_idx.find(te.id);
        auto ai = align_idx.find(te.id);
        auto ti = tokens.find(te.id);
        auto li = labels.find(te.id);
        if (si == speech_idx.end() || ai == align_idx.end() || ti == tokens.end() ||
            li == labels.end())
            throw DataError("load_dataset: utterance '" + te.id + "' missing from a sidecar file");
        Item item;
        item.utt = te.id;
        item.text_layers = std::move(te.layers);
        item.speech_layers = std::move(speech[si->second].layers);
        item.align = aligns[ai->second];
        item.tokens = ti->second;
        item.label = li->second;
        item.align.validate(item.speech_layers[0].rows());
        if (item.tokens.size() != item.align.segments.size())
            throw DataError("load_dataset: utterance '" + te.id + "': token/segment count mismatch");
        ds.items.push_back(std::move(item));
    }
    return ds;
}

struct SplitDataset {
    Dataset train, val, test;
};

/// 80/10/10 split keyed by hashed utterance id, stable across runs and
/// independent of file order.
inline SplitDataset split_dataset(Dataset ds) {
    SplitDataset out;
    for (auto& item : ds.items) {
        std::uint64_t bucket = Rng::mix(fnv1a(item.utt)) % 10;
        if (bucket < 8)
            out.train.items.push_back(std::move(item));
        else if (bucket == 8)
            out.val.items.push_back(std::move(item));
        else
            out.test.items.push_back(std::move(item));
    }
    return out;
}

} // namespace kbca
