#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kbca/tensor.hpp"

namespace kbca {

struct LexiconEntry {
    double valence = 0.0;
    double arousal = 0.0;
    double dominance = 0.0;
};

/// Lowercases and strips surrounding ASCII punctuation. No stemming.
inline std::string normalize_token(const std::string& raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string out = raw.substr(b, e - b);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Word -> (valence, arousal, dominance), immutable after load.
class LexiconTable {
public:
    void insert(const std::string& word, LexiconEntry e) { table_[word] = e; }

    const LexiconEntry* find(const std::string& token) const {
        auto it = table_.find(normalize_token(token));
        return it == table_.end() ? nullptr : &it->second;
    }

    std::size_t size() const { return table_.size(); }

private:
    std::unordered_map<std::string, LexiconEntry> table_;
};

/// Reads a 4-column TSV (word, valence, arousal, dominance) with an
/// optional header line starting with "word". Scores must lie in [-1, 1].
/// Duplicates: last entry wins. Multi-word entries are skipped. Both
/// conditions append to warnings when provided.
inline LexiconTable load_lexicon(const std::string& path,
                                 std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_lexicon: cannot open " + path);
    LexiconTable lex;
    std::string line;
    std::size_t lineno = 0;
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (;;) {
            std::size_t tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (lineno == 1 && !cols.empty()) {
            std::string head = cols[0];
            std::transform(head.begin(), head.end(), head.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            if (head.rfind("word", 0) == 0) continue;
        }
        if (cols.size() != 4)
            throw ParseError("load_lexicon: line " + std::to_string(lineno) + ": expected 4 columns, got " +
                             std::to_string(cols.size()));
        std::string word = normalize_token(cols[0]);
        if (word.find(' ') != std::string::npos) {
            warn("load_lexicon: line " + std::to_string(lineno) + ": multi-word entry ignored");
            continue;
        }
        double vad[3];
        for (int k = 0; k < 3; ++k) {
            std::istringstream ss(cols[k + 1]);
            if (!(ss >> vad[k]) || !(ss >> std::ws).eof())
                throw ParseError("load_lexicon: line " + std::to_string(lineno) + ": non-numeric score '" +
                                 cols[k + 1] + "'");
            if (vad[k] < -1.0 || vad[k] > 1.0)
                throw ParseError("load_lexicon: line " + std::to_string(lineno) + ": score " + cols[k + 1] +
                                 " outside [-1, 1]");
        }
        if (lex.find(word) != nullptr)
            warn("load_lexicon: line " + std::to_string(lineno) + ": duplicate word '" + word +
                 "', last entry wins");
        lex.insert(word, LexiconEntry{vad[0], vad[1], vad[2]});
    }
    return lex;
}

/// Per-token emotion intensity: L2 norm of (v, a, d), 0 when the token is
/// absent from the lexicon. Each value lies in [0, sqrt(3)].
inline std::vector<double> intensity(const std::vector<std::string>& tokens,
                                     const LexiconTable& lex) {
    std::vector<double> out;
    out.reserve(tokens.size());
    for (const auto& tok : tokens) {
        const LexiconEntry* e = lex.find(tok);
        if (!e) {
            out.push_back(0.0);
        } else {
            out.push_back(std::sqrt(e->valence * e->valence + e->arousal * e->arousal +
                                    e->dominance * e->dominance));
        }
    }
    return out;
}

/// Knowledge softening: i_soft[k] = dot(M[k, :], i) for a row-stochastic
/// attention map M.
inline std::vector<double> soften(const Tensor& att_map, const std::vector<double>& i) {
    if (att_map.rank() != 2 || att_map.cols() != i.size())
        throw ShapeError("soften: map " + att_map.shape_str() + " vs intensity length " +
                         std::to_string(i.size()));
    std::vector<double> out(att_map.rows(), 0.0);
    for (std::size_t r = 0; r < att_map.rows(); ++r)
        for (std::size_t c = 0; c < att_map.cols(); ++c) out[r] += att_map(r, c) * i[c];
    return out;
}

} // namespace kbca
