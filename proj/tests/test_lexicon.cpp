#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "kbca/lexicon.hpp"
#include "kbca/rng.hpp"

using namespace kbca;

namespace {

std::string write_tmp(const std::string& name, const std::string& content) {
    std::string path = std::string("/tmp/kbca_lex_") + name + ".tsv";
    std::ofstream os(path, std::ios::binary);
    os << content;
    return path;
}

} // namespace

TEST_CASE("normalize_token lowercases and strips surrounding punctuation") {
    CHECK(normalize_token("Hello") == "hello");
    CHECK(normalize_token("\"angry!\"") == "angry");
    CHECK(normalize_token("don't") == "don't"); // interior punctuation kept
    CHECK(normalize_token("...") == "");
    CHECK(normalize_token("WORD.") == "word");
}

TEST_CASE("load_lexicon parses a 4-column TSV with optional header") {
    auto path = write_tmp("ok",
                          "word\tvalence\tarousal\tdominance\n"
                          "happy\t0.9\t0.6\t0.3\n"
                          "Sad\t-0.8\t-0.4\t-0.2\r\n");
    LexiconTable lex = load_lexicon(path);
    CHECK(lex.size() == 2);
    REQUIRE(lex.find("happy") != nullptr);
    CHECK(lex.find("happy")->valence == doctest::Approx(0.9));
    REQUIRE(lex.find("SAD!") != nullptr); // lookup normalizes too
    CHECK(lex.find("SAD!")->arousal == doctest::Approx(-0.4));
    CHECK(lex.find("missing") == nullptr);
}

TEST_CASE("load_lexicon works without a header line") {
    auto path = write_tmp("nohdr", "calm\t0.2\t-0.7\t0.1\n");
    LexiconTable lex = load_lexicon(path);
    CHECK(lex.size() == 1);
    CHECK(lex.find("calm") != nullptr);
}

TEST_CASE("load_lexicon rejects out-of-range scores with the line number") {
    auto path = write_tmp("range", "ok\t0.1\t0.1\t0.1\nbad\t1.5\t0.0\t0.0\n");
    try {
        load_lexicon(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("load_lexicon rejects malformed rows") {
    CHECK_THROWS_AS(load_lexicon(write_tmp("cols", "a\t0.1\t0.2\n")), ParseError);
    CHECK_THROWS_AS(load_lexicon(write_tmp("num", "a\tx\t0.2\t0.3\n")), ParseError);
    CHECK_THROWS_AS(load_lexicon("/tmp/kbca_lex_definitely_missing.tsv"), ParseError);
}

TEST_CASE("duplicates: last entry wins, with a warning") {
    auto path = write_tmp("dup", "a\t0.1\t0.1\t0.1\na\t0.5\t0.5\t0.5\n");
    std::vector<std::string> warnings;
    LexiconTable lex = load_lexicon(path, &warnings);
    CHECK(lex.size() == 1);
    CHECK(lex.find("a")->valence == doctest::Approx(0.5));
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("duplicate") != std::string::npos);
}

TEST_CASE("multi-word entries are skipped with a warning") {
    auto path = write_tmp("multi", "not happy\t0.1\t0.1\t0.1\nfine\t0.2\t0.2\t0.2\n");
    std::vector<std::string> warnings;
    LexiconTable lex = load_lexicon(path, &warnings);
    CHECK(lex.size() == 1);
    CHECK(lex.find("fine") != nullptr);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("multi-word") != std::string::npos);
}

TEST_CASE("empty file yields an empty table") {
    LexiconTable lex = load_lexicon(write_tmp("empty", ""));
    CHECK(lex.size() == 0);
}

TEST_CASE("intensity is the L2 norm of (v,a,d), zero for OOV") {
    LexiconTable lex;
    lex.insert("max", LexiconEntry{1.0, -1.0, 1.0});
    lex.insert("mid", LexiconEntry{0.3, 0.0, -0.4});
    auto i = intensity({"max", "unknown", "mid"}, lex);
    REQUIRE(i.size() == 3);
    CHECK(i[0] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(i[1] == 0.0);
    CHECK(i[2] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("soften: identity map returns the input, uniform map averages") {
    std::vector<double> i = {1.0, 0.0, 0.5, 0.2};
    Tensor eye({4, 4});
    for (int k = 0; k < 4; ++k) eye(k, k) = 1.0;
    auto same = soften(eye, i);
    for (int k = 0; k < 4; ++k) CHECK(same[k] == doctest::Approx(i[k]));

    Tensor uni = Tensor::full({4, 4}, 0.25);
    auto avg = soften(uni, i);
    for (int k = 0; k < 4; ++k) CHECK(avg[k] == doctest::Approx(0.425));

    CHECK_THROWS_AS(soften(Tensor({4, 3}), i), ShapeError);
}

TEST_CASE("soften of a row-stochastic map stays inside the value range") {
    Rng rng(5, 0x11);
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t n = 2 + rng.below(6);
        std::vector<double> i(n);
        double lo = 1e300, hi = -1e300;
        for (auto& x : i) {
            x = rng.uniform() * std::sqrt(3.0);
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        Tensor map({n, n});
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                map(r, c) = rng.uniform() + 1e-9;
                s += map(r, c);
            }
            for (std::size_t c = 0; c < n; ++c) map(r, c) /= s;
        }
        for (double v : soften(map, i)) {
            CHECK(v >= lo - 1e-12);
            CHECK(v <= hi + 1e-12);
        }
    }
}
