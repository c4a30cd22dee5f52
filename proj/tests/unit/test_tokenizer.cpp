#include <doctest.h>

#include <filesystem>

#include "kdadapt/corpus.hpp"
#include "kdadapt/error.hpp"
#include "kdadapt/tokenizer.hpp"

using namespace kdadapt;

namespace {

ParallelCorpus toy() {
    return ParallelCorpus("toy", CorpusRole::train, {{{"ab", "ab", "abc"}, {"ab"}}});
}

} // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("merges follow counts, ties break lexicographically, learning stops when nothing is left") {
    const BpeModel bpe = learn_bpe(toy(), 10);
    const std::vector<Merge> expected{{"a", "b</w>"}, {"a", "b"}, {"ab", "c</w>"}};
    CHECK(bpe.merges() == expected);
    CHECK(bpe.characters() == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("segmentation applies merges by rank") {
    const BpeModel bpe = learn_bpe(toy(), 2);
    CHECK(bpe.segment("ab") == std::vector<std::string>{"ab</w>"});
    CHECK(bpe.segment("abc") == std::vector<std::string>{"ab", "c</w>"});
    CHECK(bpe.segment("cab") == std::vector<std::string>{"c", "ab</w>"});
    // Unknown characters become the unknown form.
    CHECK(bpe.segment("zb") == std::vector<std::string>{"<unk>", "b</w>"});
    CHECK(bpe.token_id("zzz") == SpecialTokens::unk);
}

TEST_CASE("apply then detokenize restores known words") {
    DomainSpec spec;
    spec.size = 400;
    const ParallelCorpus c = generate_domain(spec);
    const BpeModel bpe = learn_bpe(c, 50);
    const ParallelCorpus enc = apply_bpe(bpe, c);
    CHECK(detokenize(enc).pairs() == c.pairs());
    for (const auto &p : enc.pairs())
        CHECK(bpe.decode(bpe.encode(p.target)) == p.target);
}

TEST_CASE("ids: specials first, decode stops at eos and skips bos and pad") {
    const BpeModel bpe = learn_bpe(toy(), 1);
    CHECK(bpe.model_vocab_size() == bpe.vocab().size() + 4);
    const TokenId x = bpe.token_id("ab</w>");
    CHECK(x >= SpecialTokens::count);
    CHECK(bpe.token(x) == "ab</w>");
    CHECK(bpe.decode({SpecialTokens::bos, x, SpecialTokens::pad, x, SpecialTokens::eos, x}) == Sentence{"ab</w>", "ab</w>"});
}

TEST_CASE("serialization round trip and header checks") {
    const BpeModel bpe = learn_bpe(toy(), 3);
    CHECK(BpeModel::parse(bpe.serialize()) == bpe);
    const auto path = (std::filesystem::temp_directory_path() / "kdadapt-unit-merges.txt").string();
    save_bpe(bpe, path);
    CHECK(load_bpe(path).fingerprint() == bpe.fingerprint());
    CHECK_THROWS_AS(BpeModel::parse("a b\n"), Error);
    CHECK_THROWS_AS(load_bpe("/nonexistent/merges"), Error);
}

TEST_CASE("learning on a dev corpus is refused") {
    const ParallelCorpus dev("d", CorpusRole::dev, {{{"a"}, {"b"}}});
    try {
        learn_bpe(dev, 5);
        FAIL("expected an error");
    } catch (const Error &e) {
        CHECK(e.category() == ErrorCategory::protocol);
    }
}

TEST_CASE("utf-8 characters") {
    CHECK(utf8_characters("a\xc3\xa9z") == std::vector<std::string>{"a", "\xc3\xa9", "z"});
}

}
