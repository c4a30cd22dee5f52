#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kdadapt/corpus.hpp"
#include "kdadapt/error.hpp"

using namespace kdadapt;

namespace {

ErrorCategory category_of(const std::function<void()> &f) {
    try {
        f();
    } catch (const Error &e) {
        return e.category();
    }
    FAIL("no error raised");
    return ErrorCategory::usage;
}

std::filesystem::path scratch(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / "kdadapt-unit";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_SUITE("corpus") {

TEST_CASE("generation is deterministic and respects the length range") {
    DomainSpec spec;
    spec.seed = 11;
    spec.size = 300;
    spec.min_length = 2;
    spec.max_length = 6;
    const ParallelCorpus a = generate_domain(spec);
    const ParallelCorpus b = generate_domain(spec);
    CHECK(a.pairs() == b.pairs());
    CHECK(a.size() == 300);
    for (const auto &p : a.pairs()) {
        CHECK(p.source.size() >= 2);
        CHECK(p.source.size() <= 6);
        CHECK(p.target.size() == p.source.size());
    }
    spec.seed = 12;
    CHECK(generate_domain(spec).pairs() != a.pairs());
}

TEST_CASE("domains share a base lexicon and remap the requested fraction") {
    DomainSpec general;
    general.seed = 1;
    DomainSpec shifted = general;
    shifted.seed = 2;
    shifted.domain_lexicon_fraction = 0.3;
    const Lexicon lg(general), ls(shifted);
    std::size_t remapped = 0;
    for (std::size_t i = 0; i < ls.vocab_size(); ++i) {
        CHECK(lg.base_index(i) == ls.base_index(i));
        CHECK_FALSE(lg.remapped(i));
        remapped += ls.remapped(i) ? 1 : 0;
    }
    CHECK(remapped == 60);
    // Still a bijection.
    std::vector<int> hits(ls.vocab_size(), 0);
    for (std::size_t i = 0; i < ls.vocab_size(); ++i)
        ++hits[ls.translate_index(i)];
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

TEST_CASE("reorder rules") {
    const std::vector<int> x{1, 2, 3, 4, 5, 6, 7};
    CHECK(apply_reorder(x, ReorderRule::none) == x);
    CHECK(apply_reorder(x, ReorderRule::swap_adjacent) == std::vector<int>{2, 1, 4, 3, 6, 5, 7});
    CHECK(apply_reorder(x, ReorderRule::reverse_window) == std::vector<int>{3, 2, 1, 6, 5, 4, 7});
    CHECK(parse_reorder(reorder_name(ReorderRule::swap_adjacent)) == ReorderRule::swap_adjacent);
    CHECK(category_of([] { parse_reorder("sideways"); }) == ErrorCategory::validation);
}

TEST_CASE("spec validation") {
    DomainSpec s;
    s.domain_lexicon_fraction = 1.5;
    CHECK(category_of([&] { s.validate(); }) == ErrorCategory::validation);
    s = DomainSpec{};
    s.min_length = 5;
    s.max_length = 4;
    CHECK(category_of([&] { s.validate(); }) == ErrorCategory::validation);
}

TEST_CASE("pairs are validated") {
    CHECK(category_of([] { validate_pair({{}, {"a"}}, 0); }) == ErrorCategory::validation);
    CHECK(category_of([] { validate_pair({{"a b"}, {"a"}}, 0); }) == ErrorCategory::validation);
    CHECK(category_of([] { ParallelCorpus("x", CorpusRole::train, {{{"a"}, {}}}); }) == ErrorCategory::validation);
}

TEST_CASE("save and load round trip; misaligned files are rejected") {
    DomainSpec spec;
    spec.size = 50;
    const ParallelCorpus c = generate_domain(spec);
    const auto prefix = scratch("roundtrip").string();
    save_corpus_prefix(c, prefix);
    const ParallelCorpus back = load_corpus_prefix(prefix);
    CHECK(back.pairs() == c.pairs());
    CHECK(back.fingerprint() == c.fingerprint());

    std::ofstream(prefix + ".tgt", std::ios::app) << "extra line\n";
    CHECK(category_of([&] { load_corpus_prefix(prefix); }) == ErrorCategory::alignment);
    CHECK(category_of([&] { load_corpus_prefix(scratch("missing").string()); }) == ErrorCategory::io);
}

TEST_CASE("fingerprint covers contents only") {
    const std::vector<SentencePair> pairs{{{"a", "b"}, {"c"}}};
    const ParallelCorpus x("one", CorpusRole::train, pairs), y("two", CorpusRole::dev, pairs);
    CHECK(x.fingerprint() == y.fingerprint());
    CHECK(x.id().rfind("one@", 0) == 0);
    CHECK(x.id().size() == 4 + 12);
    const ParallelCorpus z("one", CorpusRole::train, {{{"a", "b"}, {"d"}}});
    CHECK(z.fingerprint() != x.fingerprint());
}

TEST_CASE("dev split takes the tail") {
    DomainSpec spec;
    spec.size = 10;
    const ParallelCorpus c = generate_domain(spec);
    auto [train, dev] = split_dev(c, 3);
    CHECK(train.size() == 7);
    CHECK(dev.size() == 3);
    CHECK(dev.role() == CorpusRole::dev);
    CHECK(dev[0] == c[7]);
    CHECK(category_of([&] { split_dev(c, 10); }) == ErrorCategory::validation);
    CHECK(category_of([&] { split_dev(c, 0); }) == ErrorCategory::validation);
}

TEST_CASE("token helpers") {
    CHECK(split_tokens("  a\tb  c ") == Sentence{"a", "b", "c"});
    CHECK(join_tokens({"a", "b"}) == "a b");
}

}
