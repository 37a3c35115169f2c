#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "itercqr/autodiff.hpp"

using namespace itercqr;

namespace {

constexpr double kFdEps = 1e-6;
// Central differences on order-1 scalars carry roundoff noise near
// eps_machine / step ~ 1e-10; the absolute floor sits above it so near-zero
// gradient components do not amplify that noise into spurious failures.
constexpr double kFdRtol = 1e-4;
constexpr double kFdAtol = 1e-8;

// Central finite difference of a scalar-building function against the
// analytic gradient from the tape.
void check_gradients(const std::vector<double>& x0,
                     const std::function<Tape::Ref(Tape&, Tape::Ref)>& build) {
    std::vector<double> grad(x0.size(), 0.0);
    {
        Tape t;
        Tape::Ref x = t.param(x0.data(), grad.data(), x0.size());
        Tape::Ref y = build(t, x);
        t.backward(y);
    }
    auto eval = [&](const std::vector<double>& x) {
        Tape t(false);
        Tape::Ref xr = t.param(x.data(), nullptr, x.size());
        return t.scalar(build(t, xr));
    };
    for (std::size_t i = 0; i < x0.size(); ++i) {
        auto xp = x0;
        auto xm = x0;
        xp[i] += kFdEps;
        xm[i] -= kFdEps;
        double fd = (eval(xp) - eval(xm)) / (2 * kFdEps);
        INFO("coordinate " << i << " analytic " << grad[i] << " fd " << fd);
        CHECK(std::abs(grad[i] - fd) <= kFdRtol * std::max(std::abs(grad[i]), std::abs(fd)) + kFdAtol);
    }
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rand_uniform(rng, -scale, scale);
    }
    return v;
}

}  // namespace

TEST_CASE("softmax values are a probability distribution") {
    auto p = Tape::softmax_values({-1.0, -2.0});
    REQUIRE(p.size() == 2);
    CHECK(p[0] == Catch::Approx(0.731058578630005).epsilon(1e-9));
    CHECK(p[1] == Catch::Approx(0.268941421369995).epsilon(1e-9));

    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        auto v = random_vec(rng, 1 + rng() % 10, 30.0);  // large magnitudes stay stable
        auto q = Tape::softmax_values(v);
        double sum = 0.0;
        for (double x : q) {
            CHECK(x >= 0.0);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("elementwise and reduction ops match finite differences") {
    std::mt19937_64 rng(17);

    SECTION("sigmoid/tanh/mul chain") {
        check_gradients(random_vec(rng, 4), [](Tape& t, Tape::Ref x) {
            Tape::Ref s = t.sigmoid(x);
            Tape::Ref h = t.tanh_op(x);
            Tape::Ref m = t.mul(s, h);
            return t.dot(m, t.input(std::vector<double>{1.0, -2.0, 0.5, 3.0}));
        });
    }
    SECTION("affine") {
        check_gradients(random_vec(rng, 5), [](Tape& t, Tape::Ref x) {
            return t.dot(t.affine(x, -1.5, 0.25), t.input(std::vector<double>(5, 1.0)));
        });
    }
    SECTION("add and concat") {
        check_gradients(random_vec(rng, 6), [](Tape& t, Tape::Ref x) {
            Tape::Ref y = t.add(x, x);
            Tape::Ref c = t.concat(y, x);
            return t.dot(c, t.input(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
        });
    }
    SECTION("softmax composed with dot") {
        check_gradients(random_vec(rng, 7), [](Tape& t, Tape::Ref x) {
            return t.dot(t.softmax(x), t.input(std::vector<double>{3, 1, 4, 1, 5, 9, 2}));
        });
    }
}

TEST_CASE("matvec matches finite differences in both weights and input") {
    std::mt19937_64 rng(23);
    const std::size_t rows = 3;
    const std::size_t cols = 4;
    // first rows*cols entries are the matrix, the rest the vector
    check_gradients(random_vec(rng, rows * cols + cols), [&](Tape& t, Tape::Ref x) {
        Tape::Ref wm = t.slice(x, 0, rows * cols);
        Tape::Ref xv = t.slice(x, rows * cols, cols);
        Tape::Ref y = t.matvec(wm, rows, cols, xv);
        return t.dot(y, t.input(std::vector<double>{1.0, -1.0, 2.0}));
    });
}

TEST_CASE("weighted_sum matches finite differences") {
    std::mt19937_64 rng(29);
    // 2 weights + two 3-d states
    check_gradients(random_vec(rng, 8), [](Tape& t, Tape::Ref x) {
        Tape::Ref w = t.slice(x, 0, 2);
        Tape::Ref s0 = t.slice(x, 2, 3);
        Tape::Ref s1 = t.slice(x, 5, 3);
        Tape::Ref y = t.weighted_sum(w, {s0, s1});
        return t.dot(y, t.input(std::vector<double>{1.0, 2.0, -1.0}));
    });
}

TEST_CASE("log_mixture_prob gradient matches finite differences") {
    std::mt19937_64 rng(31);
    // layout: 5 logits, 3 attention weights (softmaxed), 1 gate pre-sigmoid
    std::vector<int> src_ids{2, 4, 2};  // token 2 appears twice in the source
    for (int target : {2, 4, 1}) {
        check_gradients(random_vec(rng, 9), [&](Tape& t, Tape::Ref x) {
            Tape::Ref logits = t.slice(x, 0, 5);
            Tape::Ref attn = t.softmax(t.slice(x, 5, 3));
            Tape::Ref gate = t.sigmoid(t.slice(x, 8, 1));
            return t.log_mixture_prob(logits, attn, gate, src_ids, target);
        });
    }
}

TEST_CASE("log_mixture_prob without attention reduces to log softmax") {
    Tape t(false);
    std::vector<double> logits{0.5, -1.0, 2.0};
    Tape::Ref l = t.input(logits);
    Tape::Ref lp = t.log_mixture_prob(l, Tape::kNoRef, Tape::kNoRef, {}, 2);
    auto p = Tape::softmax_values(logits);
    CHECK(t.scalar(lp) == Catch::Approx(std::log(p[2])).epsilon(1e-12));
}

TEST_CASE("backward demands a scalar root and gradient mode") {
    Tape t;
    Tape::Ref v = t.input(std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(t.backward(v), InvariantError);

    Tape frozen(false);
    Tape::Ref s = frozen.input(std::vector<double>{1.0});
    CHECK_THROWS_AS(frozen.backward(s), InvariantError);
}

TEST_CASE("param accumulates into the caller's gradient buffer") {
    std::vector<double> x{2.0, 3.0};
    std::vector<double> g(2, 0.0);
    Tape t;
    Tape::Ref p = t.param(x.data(), g.data(), 2);
    Tape::Ref y = t.dot(p, p);  // x0^2 + x1^2
    t.backward(y);
    CHECK(g[0] == Catch::Approx(4.0));
    CHECK(g[1] == Catch::Approx(6.0));

    // gradients accumulate across backward calls on fresh tapes
    Tape t2;
    Tape::Ref p2 = t2.param(x.data(), g.data(), 2);
    t2.backward(t2.dot(p2, p2));
    CHECK(g[0] == Catch::Approx(8.0));
}
