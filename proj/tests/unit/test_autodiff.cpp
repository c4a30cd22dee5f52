#include <doctest.h>

#include <cmath>

#include "kdadapt/autodiff.hpp"
#include "kdadapt/random.hpp"
#include "kdadapt/transformer.hpp"
#include "oracles.hpp"

using namespace kdadapt;
using nn::Matrix;

TEST_SUITE("autodiff") {

TEST_CASE("central differences agree with every primitive and the model loss") {
    const auto r = testing::gradient_suite(20);
    INFO(r.detail);
    INFO("worst relative error " << r.worst);
    CHECK(r.ok());
    CHECK(r.worst <= testing::kGradTolerance);
}

TEST_CASE("log_softmax_rows is stable for large logits") {
    Matrix x(1, 3);
    x << 1000.0, 1001.0, 1002.0;
    const Matrix y = nn::log_softmax_rows(x);
    CHECK(y.allFinite());
    CHECK(std::exp(y(0, 0)) + std::exp(y(0, 1)) + std::exp(y(0, 2)) == doctest::Approx(1.0));
    CHECK(y(0, 2) - y(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("causal attention ignores later keys") {
    Rng rng(3);
    auto make = [&](int rows) {
        Matrix m(rows, 4);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = rng.uniform(-1, 1);
        return m;
    };
    const Matrix q = make(3), k = make(3), v = make(3);
    auto segs = std::make_shared<const std::vector<nn::AttentionSegment>>(
        std::vector<nn::AttentionSegment>{{0, 3, 0, 3}});
    auto run = [&](const Matrix &vv) {
        nn::Tape t;
        return Matrix(t.value(nn::ops::attention(t, t.constant(q), t.constant(k), t.constant(vv), segs, 2, true)));
    };
    Matrix v2 = v;
    v2.row(2).setConstant(50.0);
    const Matrix a = run(v), b = run(v2);
    CHECK((a.topRows(2) - b.topRows(2)).norm() == doctest::Approx(0.0));
    CHECK((a.row(2) - b.row(2)).norm() > 1.0);
}

TEST_CASE("cross-entropy skips ignored rows and smoothing changes only the objective") {
    Matrix logits(3, 4);
    logits << 1, 2, 3, 4, 0, 0, 0, 0, 4, 3, 2, 1;
    const std::vector<std::int32_t> targets{3, 2, 0};
    nn::Tape t;
    double nll = 0.0;
    const auto loss = nn::ops::cross_entropy(t, t.constant(logits), targets, 0.0, 2, &nll);
    const Matrix ls = nn::log_softmax_rows(logits);
    const double expected = -(ls(0, 3) + ls(2, 0)) / 2.0;
    CHECK(t.value(loss)(0, 0) == doctest::Approx(expected));
    CHECK(nll == doctest::Approx(expected));
    double nll2 = 0.0;
    const auto smoothed = nn::ops::cross_entropy(t, t.constant(logits), targets, 0.1, 2, &nll2);
    CHECK(nll2 == doctest::Approx(expected));
    CHECK(t.value(smoothed)(0, 0) != doctest::Approx(expected));
}

TEST_CASE("parameter gradients accumulate across uses") {
    nn::Tensor w({1, 2});
    w.value << 2.0, -1.0;
    nn::Tape t;
    const auto p = t.parameter(w);
    Matrix ones = Matrix::Ones(1, 2);
    t.backward(nn::ops::dot_constant(t, nn::ops::add(t, p, p), ones));
    CHECK(w.grad(0, 0) == doctest::Approx(2.0));
    CHECK(w.grad(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("model forward matches incremental decoding") {
    const auto model = nn::build_model(nn::ArchConfig::preset(nn::SizeClass::Tiny, 16), 12, 9);
    const std::vector<TokenId> src{4, 5, 6, 7}, prefix{SpecialTokens::bos, 8, 9};
    const Matrix full = nn::log_softmax_rows(model.forward(src, prefix));
    const auto memory = model.encode(src);
    std::vector<nn::DecoderCache> caches(1, nn::DecoderCache(model.arch().decoder_layers()));
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        const Matrix step = model.decode_step(memory, caches, std::span<const TokenId>(&prefix[i], 1));
        CHECK((step.row(0) - full.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-9);
    }
}

}
