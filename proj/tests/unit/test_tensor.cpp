#include <doctest.h>

#include <cmath>

#include "claret/common.hpp"
#include "claret/rng.hpp"
#include "claret/tensor.hpp"

using namespace claret;
using ad::Tensor;

namespace {

Tensor random_tensor(Rng& rng, const std::vector<size_t>& shape, bool requires_grad) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<double> data(n);
    for (double& x : data) x = rng.normal(0.0, 0.8);
    return Tensor::from_data(shape, std::move(data), requires_grad);
}

// reduce an arbitrary op output to a scalar with fixed random weights so
// every coordinate's gradient is informative
Tensor weighted_sum(const Tensor& out, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(out.numel());
    for (double& x : w) x = rng.normal(0.0, 1.0);
    return ad::sum(ad::mul(out, Tensor::from_data(out.shape(), std::move(w))));
}

}  // namespace

TEST_CASE("matmul values and shape errors") {
    const Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    const Tensor c = ad::matmul(a, b);
    CHECK(c.data() == std::vector<double>{58, 64, 139, 154});
    CHECK_THROWS_AS(ad::matmul(a, a), DimensionError);
    try {
        ad::matmul(a, a);
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("softmax of zeros is uniform") {
    const Tensor z = Tensor::zeros({3, 5});
    const Tensor s = ad::softmax(z, -1);
    for (double v : s.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
    const Tensor s0 = ad::softmax(z, 0);
    for (double v : s0.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("euclidean distance basics") {
    const Tensor v = Tensor::from_data({3}, {1.0, -2.0, 0.5});
    CHECK(ad::euclidean_distance(v, v).scalar() == 0.0);
    const Tensor a = Tensor::from_data({2}, {0.0, 0.0});
    const Tensor b = Tensor::from_data({2}, {3.0, 4.0});
    CHECK(ad::euclidean_distance(a, b).scalar() == doctest::Approx(5.0));
    CHECK_THROWS_AS(ad::euclidean_distance(a, v), DimensionError);
}

TEST_CASE("cross entropy of near-one-hot logits is near zero") {
    const Tensor logits = Tensor::from_data({1, 3}, {30.0, 0.0, 0.0});
    std::vector<double> nll;
    const Tensor loss = ad::cross_entropy(logits, {0}, -1, ad::Reduction::Mean, &nll);
    CHECK(loss.scalar() < 1e-6);
    CHECK(nll.size() == 1);
    // ignored rows contribute nothing
    const Tensor two = Tensor::from_data({2, 3}, {30.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    const Tensor masked = ad::cross_entropy(two, {0, -7}, -7, ad::Reduction::Mean);
    CHECK(masked.scalar() < 1e-6);
}

TEST_CASE("backward closed forms") {
    Tensor w = Tensor::from_data({4}, {1.0, -2.0, 3.0, 0.25}, true);
    ad::backward(ad::sum(w));
    CHECK(w.grad() == std::vector<double>(4, 1.0));

    w.zero_grad();
    ad::backward(ad::scale(ad::sum(ad::mul(w, w)), 0.5));  // (w.w)/2
    for (size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(w.data()[i]));
}

TEST_CASE("backward demands a scalar and accumulates across graphs") {
    Tensor w = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    CHECK_THROWS_AS(ad::backward(ad::mul(w, w)), DimensionError);

    ad::backward(ad::sum(w));
    ad::backward(ad::sum(w));  // fresh graph, same leaves
    CHECK(w.grad() == std::vector<double>(3, 2.0));
    w.zero_grad();
    ad::backward(ad::sum(w));
    CHECK(w.grad() == std::vector<double>(3, 1.0));
}

TEST_CASE("dropout contracts") {
    Rng rng(3);
    const Tensor x = random_tensor(rng, {4, 4}, false);
    const Tensor same = ad::dropout(x, 0.0, 123);
    CHECK(same.node().get() == x.node().get());  // identity at p = 0

    const Tensor a = ad::dropout(x, 0.5, 99);
    const Tensor b = ad::dropout(x, 0.5, 99);
    CHECK(a.data() == b.data());  // fixed seed reproduces the mask
    const Tensor c = ad::dropout(x, 0.5, 100);
    CHECK(a.data() != c.data());
    for (size_t i = 0; i < a.numel(); ++i) {
        const bool zeroed = a.data()[i] == 0.0;
        if (!zeroed) CHECK(a.data()[i] == doctest::Approx(2.0 * x.data()[i]));
    }
    CHECK_THROWS_AS(ad::dropout(x, 1.0, 1), DimensionError);
}

TEST_CASE("relu subgradient at the kink is zero") {
    Tensor w = Tensor::from_data({1}, {0.0}, true);
    ad::backward(ad::sum(ad::relu(w)));
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("three layer perceptron passes exhaustive finite differences") {
    Rng rng(7);
    ad::ParameterStore params;
    auto make = [&](const std::string& name, std::vector<size_t> shape) {
        Tensor t = params.create(name, shape);
        for (double& x : t.data()) x = rng.normal(0.0, 0.5);
        return t;
    };
    const Tensor w1 = make("w1", {4, 6});
    const Tensor b1 = make("b1", {6});
    const Tensor w2 = make("w2", {6, 5});
    const Tensor b2 = make("b2", {5});
    const Tensor w3 = make("w3", {5, 1});
    const Tensor x = random_tensor(rng, {3, 4}, false);

    auto fn = [&]() {
        Tensor h1 = ad::gelu(ad::add(ad::matmul(x, w1), b1));
        Tensor h2 = ad::gelu(ad::add(ad::matmul(h1, w2), b2));
        return weighted_sum(ad::matmul(h2, w3), 17);
    };
    const auto report = ad::finite_diff_check(fn, params, 1e-3, 1e-4);
    CHECK(report.pass);
    CHECK(report.checked == params.total_numel());
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("broken gradient fixtures are caught") {
    // function value changes between evaluations -> analytic tape no longer
    // describes the function the checker probes
    {
        ad::ParameterStore params;
        Tensor w = params.create("w", {3}, {0.3, -0.7, 1.1});
        size_t call = 0;
        auto fn = [&]() {
            ++call;
            return ad::sum(ad::dropout(ad::mul(w, w), 0.5, call));
        };
        const auto report = ad::finite_diff_check(fn, params, 1e-3, 1e-4);
        CHECK_FALSE(report.pass);
        CHECK(!report.failures.empty());
    }
    // relu probed exactly at its kink: subgradient 0 vs central difference 0.5
    {
        ad::ParameterStore params;
        Tensor w = params.create("w", {1}, {0.0});
        auto fn = [&]() { return ad::sum(ad::relu(w)); };
        const auto report = ad::finite_diff_check(fn, params, 1e-3, 1e-4);
        CHECK_FALSE(report.pass);
        CHECK(report.worst_param == "w");
    }
    // identity function has zero error everywhere
    {
        ad::ParameterStore params;
        Tensor w = params.create("w", {4}, {1.0, 2.0, 3.0, 4.0});
        auto fn = [&]() { return ad::sum(w); };
        const auto report = ad::finite_diff_check(fn, params, 1e-3, 1e-7);
        CHECK(report.pass);
        CHECK(report.max_rel_error == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("every differentiable op agrees with finite differences") {
    Rng shape_rng(2024);
    auto dim = [&](size_t lo = 1, size_t hi = 8) {
        return lo + static_cast<size_t>(shape_rng.below(hi - lo + 1));
    };

    for (int trial = 0; trial < 3; ++trial) {
        const uint64_t seed = 1000 + static_cast<uint64_t>(trial);
        Rng rng(seed);

        {  // matmul + add broadcast + gelu
            ad::ParameterStore params;
            const size_t m = dim(), k = dim(), n = dim();
            Tensor a = params.create("a", {m, k});
            Tensor b = params.create("b", {k, n});
            Tensor bias = params.create("bias", {n});
            for (auto* t : {&a, &b, &bias})
                for (double& x : t->data()) x = rng.normal(0.0, 0.7);
            auto fn = [&]() {
                return weighted_sum(ad::gelu(ad::add(ad::matmul(a, b), bias)), seed);
            };
            CHECK(ad::finite_diff_check(fn, params, 1e-3, 1e-4).pass);
        }
        {  // bmm both orientations, permute, reshape, slice, concat
            ad::ParameterStore params;
            const size_t B = dim(1, 3), m = dim(), k = dim(), n = dim(2, 6);
            Tensor a = params.create("a", {B, m, k});
            Tensor b = params.create("b", {B, k, n});
            Tensor bt = params.create("bt", {B, n, k});
            for (auto* t : {&a, &b, &bt})
                for (double& x : t->data()) x = rng.normal(0.0, 0.7);
            auto fn = [&]() {
                Tensor c1 = ad::bmm(a, b);
                Tensor c2 = ad::bmm(a, bt, true);
                Tensor merged = ad::concat({c1, c2}, 2);
                Tensor rolled = ad::permute(merged, {1, 0, 2});
                Tensor sliced = ad::slice(rolled, 2, 0, n);
                return weighted_sum(ad::reshape(sliced, {m * B * n}), seed + 1);
            };
            CHECK(ad::finite_diff_check(fn, params, 1e-3, 1e-4).pass);
        }
        {  // softmax, layer_norm, mul, transpose, mean
            ad::ParameterStore params;
            const size_t r = dim(2, 6), c = dim(2, 8);
            Tensor a = params.create("a", {r, c});
            Tensor g = params.create("g", {c});
            for (auto* t : {&a, &g})
                for (double& x : t->data()) x = rng.normal(0.0, 0.9);
            auto fn = [&]() {
                Tensor nrm = ad::layer_norm(a, 1e-5);
                Tensor soft = ad::softmax(ad::mul(nrm, g), -1);
                return weighted_sum(ad::transpose(soft), seed + 2);
            };
            CHECK(ad::finite_diff_check(fn, params, 1e-3, 2e-4).pass);
        }
        {  // attention softmax with ragged lengths, causal and not
            ad::ParameterStore params;
            const size_t G = 2, nq = dim(2, 5), nk = dim(2, 6);
            Tensor scores = params.create("scores", {G, nq, nk});
            for (double& x : scores.data()) x = rng.normal(0.0, 1.0);
            const std::vector<size_t> valid{nk, std::max<size_t>(1, nk - 1)};
            auto fn = [&]() {
                Tensor p1 = ad::attention_softmax(scores, valid, false);
                Tensor p2 = ad::attention_softmax(scores, valid, true);
                return ad::add(weighted_sum(p1, seed + 3), weighted_sum(p2, seed + 4));
            };
            CHECK(ad::finite_diff_check(fn, params, 1e-3, 2e-4).pass);
        }
        {  // embedding gather + cross entropy + euclidean + dropout (fixed mask)
            ad::ParameterStore params;
            const size_t v = dim(4, 8), d = dim(3, 8);
            Tensor table = params.create("table", {v, d});
            Tensor u = params.create("u", {d});
            Tensor w = params.create("w", {d});
            for (auto* t : {&table, &u, &w})
                for (double& x : t->data()) x = rng.normal(0.0, 0.8);
            std::vector<int32_t> ids{0, static_cast<int32_t>(v - 1), 1};
            std::vector<int32_t> targets{static_cast<int32_t>(v - 1), 0, -9};
            auto fn = [&]() {
                Tensor rows = ad::embedding_gather(table, ids);
                Tensor logits = ad::matmul(rows, ad::transpose(table));
                Tensor ce = ad::cross_entropy(logits, targets, -9, ad::Reduction::Mean);
                Tensor dist = ad::euclidean_distance(u, w);
                Tensor dropped = ad::sum(ad::dropout(ad::mul(u, u), 0.3, 321));
                return ad::add(ad::add(ce, dist), dropped);
            };
            CHECK(ad::finite_diff_check(fn, params, 1e-3, 2e-4).pass);
        }
    }
}

TEST_CASE("parameter store is ordered and guards duplicates") {
    ad::ParameterStore params;
    params.create("alpha", {2});
    params.create("beta", {3});
    CHECK(params.count() == 2);
    CHECK(params.name_at(0) == "alpha");
    CHECK(params.name_at(1) == "beta");
    CHECK(params.total_numel() == 5);
    CHECK_THROWS_AS(params.create("alpha", {1}), StructureError);
    CHECK_THROWS_AS(params.get("gamma"), StructureError);
}

TEST_CASE("no-grad scope suppresses the tape") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    {
        ad::NoGradGuard guard;
        const Tensor out = ad::mul(w, w);
        CHECK_FALSE(out.requires_grad());
    }
    const Tensor out = ad::mul(w, w);
    CHECK(out.requires_grad());
}
