#include <doctest.h>

#include <cmath>

#include "kdadapt/bleu.hpp"
#include "kdadapt/random.hpp"
#include "oracles.hpp"

using namespace kdadapt;

TEST_SUITE("bleu") {

TEST_CASE("matches the enumeration oracle on random corpora") {
    const auto r = testing::bleu_oracle_suite(200, 31);
    INFO(r.detail);
    CHECK(r.ok());
}

TEST_CASE("hand-computed example") {
    // hyp: a b c d e   ref: a b c d f g
    // p1 4/5 p2 3/4 p3 2/3 p4 1/2, bp exp(1 - 6/5)
    const std::vector<Sentence> h{{"a", "b", "c", "d", "e"}}, r{{"a", "b", "c", "d", "f", "g"}};
    const double expected = 100.0 * std::exp(1.0 - 1.2) * std::pow(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
    const BleuReport rep = corpus_bleu(h, r);
    CHECK(rep.bleu == doctest::Approx(expected).epsilon(1e-12));
    CHECK(rep.brevity_penalty == doctest::Approx(std::exp(-0.2)));
    CHECK(rep.hyp_length == 5);
    CHECK(rep.ref_length == 6);
}

TEST_CASE("clipping and zero precision") {
    CHECK(corpus_bleu({{"a", "a", "a", "a"}}, {{"a", "b", "c", "d"}}).bleu == 0.0);
    const BleuReport rep = corpus_bleu({{"x", "y", "z", "w"}}, {{"a", "b", "c", "d"}});
    CHECK(rep.bleu == 0.0);
    CHECK(rep.precisions[0] == 0.0);
}

TEST_CASE("statistics of disjoint corpora add") {
    Rng rng(5);
    const auto h = testing::random_sentences(rng, 20, 4, 10);
    const auto r = testing::random_sentences(rng, 20, 4, 10);
    BleuStats whole, a, b;
    for (std::size_t i = 0; i < 20; ++i) {
        whole.add(h[i], r[i]);
        (i < 7 ? a : b).add(h[i], r[i]);
    }
    a += b;
    CHECK(a == whole);
    CHECK(bleu_from_stats(whole).bleu == corpus_bleu(h, r).bleu);
}

TEST_CASE("identity scores exactly 100; empty and misaligned inputs") {
    const std::vector<Sentence> s{{"a", "b", "c", "d"}, {"e", "f", "g", "h", "i"}};
    CHECK(corpus_bleu(s, s).bleu == 100.0);
    CHECK(corpus_bleu(std::vector<Sentence>{}, std::vector<Sentence>{}).bleu == 0.0);
    CHECK_THROWS(corpus_bleu(s, std::vector<Sentence>{s[0]}));
}

TEST_CASE("summary and json forms") {
    const std::vector<Sentence> s{{"a", "b", "c", "d"}};
    const BleuReport rep = corpus_bleu(s, s);
    CHECK(rep.summary().rfind("BLEU = 100.00", 0) == 0);
    CHECK(rep.to_json().find("\"bleu\"") != std::string::npos);
}

}
