#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "reghnt/autodiff.hpp"
#include "reghnt/gradcheck.hpp"

using namespace reghnt;
namespace ad = reghnt::ad;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(r, c);
    for (double& v : t.data) v = d(rng);
    return t;
}

struct Fixture {
    ParamStore store;
    std::mt19937_64 rng{3};

    Parameter& param(const std::string& name, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
        Parameter& p = store.add(name, r, c);
        p.value = random_tensor(r, c, rng, lo, hi);
        return p;
    }

    // loss = sum(out * W) for a fixed random W so every output coordinate matters.
    double check(const std::function<ad::Var(ad::Tape&)>& build) {
        Tensor weights;
        LossClosure loss = [&](Gradients* g) {
            ad::Tape tape;
            ad::Var out = build(tape);
            if (weights.size() == 0) {
                std::mt19937_64 wr(99);
                weights = random_tensor(out.rows(), out.cols(), wr);
            }
            ad::Var l = ad::sum(ad::mul(out, tape.constant(weights)));
            if (g) tape.backward(l, *g);
            return l.scalar();
        };
        GradCheckOptions opts;
        opts.epsilon = 1e-6;
        return grad_check(store, loss, opts).max_rel_error;
    }
};

constexpr double kTol = 1e-7;

}  // namespace

TEST_CASE("elementwise and matrix ops") {
    Fixture f;
    auto& a = f.param("a", 3, 4);
    auto& b = f.param("b", 4, 2);
    auto& c = f.param("c", 3, 4);
    auto& row = f.param("row", 1, 4);
    auto& s = f.param("s", 1, 1);
    CHECK(f.check([&](ad::Tape& t) { return ad::matmul(t.param(a), t.param(b)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::add(t.param(a), t.param(c)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::add(t.param(a), t.param(row)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::sub(t.param(a), t.param(s)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::mul(t.param(a), t.param(c)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::mul(t.param(a), t.param(row)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::mul(t.param(a), t.param(s)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::scale(ad::one_minus(t.param(a)), -2.5); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::transpose(t.param(a)); }) < kTol);
    // A parameter used twice accumulates both paths.
    CHECK(f.check([&](ad::Tape& t) { return ad::mul(t.param(a), t.param(a)); }) < kTol);
}

TEST_CASE("nonlinearities") {
    Fixture f;
    auto& a = f.param("a", 3, 5, -3.0, 3.0);
    auto& pos = f.param("pos", 2, 3, 0.5, 2.0);
    CHECK(f.check([&](ad::Tape& t) { return ad::tanh(t.param(a)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::sigmoid(t.param(a)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::gelu(t.param(a)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::log(t.param(pos)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::softmax_rows(t.param(a)); }) < kTol);
}

TEST_CASE("shape ops") {
    Fixture f;
    auto& a = f.param("a", 4, 3);
    auto& b = f.param("b", 4, 2);
    auto& c = f.param("c", 2, 3);
    CHECK(f.check([&](ad::Tape& t) { return ad::concat_cols({t.param(a), t.param(b), t.param(a)}); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::concat_rows({t.param(a), t.param(c)}); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::slice_rows(t.param(a), 1, 2); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::slice_cols(t.param(a), 1, 2); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::gather_rows(t.param(a), {3, 0, 3, 1}); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::tile_cols(t.param(b), 3); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::mean_rows(t.param(a)); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::pick(t.param(a), 2, 1); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return t.gather_param_rows(a, {2, 2, 0}); }) < kTol);
}

TEST_CASE("segment and head ops") {
    Fixture f;
    auto& e = f.param("e", 6, 4);
    auto& k = f.param("k", 6, 4);
    auto& al = f.param("alpha", 6, 2);
    std::vector<int> seg{0, 0, 2, 1, 2, 2};
    CHECK(f.check([&](ad::Tape& t) { return ad::segment_sum(t.param(e), seg, 3); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::segment_softmax(t.param(e), seg, 3); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::headwise_dot(t.param(e), t.param(k), 2); }) < kTol);
    CHECK(f.check([&](ad::Tape& t) { return ad::headwise_scale(t.param(al), t.param(k)); }) < kTol);
}

TEST_CASE("layer norm") {
    Fixture f;
    auto& x = f.param("x", 3, 6);
    auto& g = f.param("gamma", 1, 6);
    auto& b = f.param("beta", 1, 6);
    CHECK(f.check([&](ad::Tape& t) { return ad::layer_norm(t.param(x), t.param(g), t.param(b)); }) < 1e-6);

    ad::Tape t;
    Tensor ones(1, 6, 1.0), zeros(1, 6);
    auto y = ad::layer_norm(t.param(x), t.constant(ones), t.constant(zeros), 0.0).value();
    for (std::size_t r = 0; r < 3; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 6; ++c) m += y(r, c);
        m /= 6;
        for (std::size_t c = 0; c < 6; ++c) v += (y(r, c) - m) * (y(r, c) - m);
        CHECK(std::abs(m) < 1e-12);
        CHECK(std::abs(v / 6 - 1.0) < 1e-9);
    }
}

TEST_CASE("softmax rows and segments are normalized") {
    std::mt19937_64 rng(1);
    ad::Tape t;
    auto s = ad::softmax_rows(t.constant(random_tensor(5, 7, rng, -30, 30))).value();
    for (std::size_t r = 0; r < 5; ++r) {
        double z = 0;
        for (std::size_t c = 0; c < 7; ++c) z += s(r, c);
        CHECK(std::abs(z - 1.0) < 1e-12);
    }
    std::vector<int> seg{1, 0, 1, 1};
    auto ss = ad::segment_softmax(t.constant(random_tensor(4, 2, rng)), seg, 2).value();
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(ss(1, c) == doctest::Approx(1.0));
        CHECK(ss(0, c) + ss(2, c) + ss(3, c) == doctest::Approx(1.0));
    }
}

TEST_CASE("dropout only in training") {
    std::mt19937_64 rng(2);
    ad::Tape t;
    auto x = t.constant(random_tensor(10, 10, rng));
    CHECK(ad::dropout(x, 0.5).id == x.id);
    t.training = true;
    auto y = ad::dropout(x, 0.5).value();
    int zeros = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y.data[i] == 0.0) ++zeros;
        else CHECK(y.data[i] == doctest::Approx(2.0 * x.value().data[i]));
    }
    CHECK(zeros > 20);
    CHECK(zeros < 80);
}

TEST_CASE("grad_check on a quadratic") {
    ParamStore store;
    auto& w = store.add("w", 2, 3);
    for (std::size_t i = 0; i < w.value.size(); ++i) w.value.data[i] = 0.3 * static_cast<double>(i) - 0.7;
    auto& unused = store.add("unused", 1, 2);
    LossClosure loss = [&](Gradients* g) {
        ad::Tape t;
        t.param(unused);
        auto x = t.param(w);
        auto l = ad::sum(ad::mul(x, x));
        if (g) t.backward(l, *g);
        return l.scalar();
    };
    auto report = grad_check(store, loss);
    CHECK(report.entries.size() == 2);
    CHECK(report.entries[0].rel_error < 1e-8);
    CHECK(report.entries[1].analytic_norm == 0.0);
    CHECK(report.entries[1].numeric_norm < 1e-9);
    CHECK(report.passed(1e-8));
}

TEST_CASE("shape errors") {
    ad::Tape t;
    auto a = t.zeros(2, 3);
    auto b = t.zeros(2, 3);
    CHECK_THROWS_AS(ad::matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(ad::add(a, t.zeros(3, 3)), std::invalid_argument);
    CHECK_THROWS_AS(ad::headwise_dot(a, b, 2), std::invalid_argument);
    CHECK_THROWS_AS(ad::slice_rows(a, 1, 2), std::out_of_range);
    Gradients g;
    CHECK_THROWS_AS(t.backward(a, g), std::invalid_argument);
}
