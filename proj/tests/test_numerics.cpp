#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "chn/adam.hpp"
#include "chn/matrix.hpp"
#include "chn/mlp.hpp"
#include "chn/prob.hpp"
#include "chn/rng.hpp"
#include "test_util.hpp"

using namespace chn;

TEST_CASE("xavier_init bounds and determinism") {
    Rng rng(7, stream::kBaseInit);
    const double a46 = std::sqrt(6.0 / (4.0 + 6.0));
    Matrix m = xavier_init(4, 6, rng);
    REQUIRE(m.rows == 6);
    REQUIRE(m.cols == 4);
    for (double x : m.data) {
        REQUIRE(x >= -a46);
        REQUIRE(x <= a46);
    }

    Rng r1(3, 0), r2(3, 0);
    Matrix s1 = xavier_init(1, 1, r1);
    Matrix s2 = xavier_init(1, 1, r2);
    REQUIRE(std::fabs(s1.data[0]) <= std::sqrt(3.0));
    REQUIRE(s1.data[0] == s2.data[0]);

    REQUIRE_THROWS_AS(xavier_init(0, 3, rng), std::invalid_argument);
    REQUIRE_THROWS_AS(xavier_init(3, 0, rng), std::invalid_argument);
}

TEST_CASE("mlp_forward basics") {
    SECTION("all-zero params give zero output") {
        MlpParams p;
        p.layers.push_back({Matrix(3, 2), std::vector<double>(3, 0.0)});
        p.layers.push_back({Matrix(2, 3), std::vector<double>(2, 0.0)});
        auto out = mlp_forward(p, std::vector<double>{1.5, -2.0});
        REQUIRE(out == std::vector<double>{0.0, 0.0});
    }
    SECTION("single identity layer is the identity") {
        MlpParams p;
        Matrix w(2, 2);
        w(0, 0) = 1.0;
        w(1, 1) = 1.0;
        p.layers.push_back({w, std::vector<double>(2, 0.0)});
        auto out = mlp_forward(p, std::vector<double>{0.3, -0.7});
        REQUIRE(out[0] == 0.3);
        REQUIRE(out[1] == -0.7);
    }
    SECTION("two-layer net matches a hand-evaluated tanh composition") {
        MlpParams p;
        Matrix w1(2, 2);
        w1(0, 0) = 0.1;
        w1(0, 1) = 0.2;
        w1(1, 0) = -0.3;
        w1(1, 1) = 0.4;
        Matrix w2(1, 2);
        w2(0, 0) = 0.5;
        w2(0, 1) = -0.25;
        p.layers.push_back({w1, {0.05, -0.05}});
        p.layers.push_back({w2, {0.1}});
        auto out = mlp_forward(p, std::vector<double>{1.0, 2.0});
        // independent evaluation, term by term
        const double h0 = std::tanh(0.1 * 1.0 + 0.2 * 2.0 + 0.05);
        const double h1 = std::tanh(-0.3 * 1.0 + 0.4 * 2.0 - 0.05);
        const double expect = 0.5 * h0 - 0.25 * h1 + 0.1;
        REQUIRE(out.size() == 1);
        REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(expect, 1e-15));
    }
    SECTION("dimension mismatch throws") {
        Rng rng(1, 0);
        MlpParams p = make_mlp({3, 2}, rng);
        REQUIRE_THROWS_AS(mlp_forward(p, std::vector<double>{1.0, 2.0}), std::invalid_argument);
    }
}

TEST_CASE("mlp_backward exactness") {
    SECTION("zero output grad gives zero gradients") {
        Rng rng(11, 0);
        MlpParams p = make_mlp({3, 4, 2}, rng);
        MlpTape tape;
        mlp_forward(p, std::vector<double>{0.1, 0.2, 0.3}, &tape);
        MlpParams g = zero_like(p);
        auto din = mlp_backward(p, tape, std::vector<double>{0.0, 0.0}, g);
        for (double x : din) REQUIRE(x == 0.0);
        for (const auto& l : g.layers) {
            for (double x : l.W.data) REQUIRE(x == 0.0);
            for (double x : l.b) REQUIRE(x == 0.0);
        }
    }
    SECTION("linear 1x1 net: d(wx)/dx = w, d(wx)/dw = x") {
        MlpParams p;
        Matrix w(1, 1);
        w(0, 0) = 2.0;
        p.layers.push_back({w, {0.0}});
        MlpTape tape;
        auto out = mlp_forward(p, std::vector<double>{3.0}, &tape);
        REQUIRE(out[0] == 6.0);
        MlpParams g = zero_like(p);
        auto din = mlp_backward(p, tape, std::vector<double>{1.0}, g);
        REQUIRE(din[0] == 2.0);
        REQUIRE(g.layers[0].W(0, 0) == 3.0);
        REQUIRE(g.layers[0].b[0] == 1.0);
    }
    SECTION("random nets match the finite-difference oracle") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(seed, stream::kBaseInit);
            MlpParams p = make_mlp({4, 6, 5, 3}, rng);
            std::vector<double> input = {0.3, -0.8, 0.5, 1.1};
            std::vector<double> og = {0.7, -0.2, 0.4};

            MlpTape tape;
            mlp_forward(p, input, &tape);
            MlpParams g = zero_like(p);
            auto din = mlp_backward(p, tape, og, g);

            TensorList params;
            collect(p, "net", params);
            auto eval = [&]() {
                auto out = mlp_forward(p, input);
                return dot(out, og);
            };
            auto fd = testutil::finite_diff(params, eval);
            TensorList gl;
            collect(g, "net", gl);
            auto analytic = flatten(gl);
            REQUIRE(testutil::max_rel_error(analytic, fd) < 1e-6);

            // input gradient against the same oracle
            TensorList inview{view("input", input)};
            auto fd_in = testutil::finite_diff(inview, eval);
            REQUIRE(testutil::max_rel_error(din, fd_in) < 1e-6);
        }
    }
}

TEST_CASE("adam_step") {
    SECTION("zero gradients leave params unchanged") {
        std::vector<double> p = {1.0, -2.0, 3.0};
        std::vector<double> g = {0.0, 0.0, 0.0};
        TensorList pv{view("p", p)}, gv{view("g", g)};
        AdamState st(3);
        adam_step(st, pv, gv, 0.1);
        REQUIRE(p == std::vector<double>{1.0, -2.0, 3.0});
        REQUIRE(st.step == 1);
    }
    SECTION("first-step magnitude is ~lr") {
        std::vector<double> p = {0.5};
        std::vector<double> g = {0.37};
        TensorList pv{view("p", p)}, gv{view("g", g)};
        AdamState st(1);
        adam_step(st, pv, gv, 1e-2);
        // bias-corrected first step: delta = lr * g / (|g| + eps)
        REQUIRE_THAT(0.5 - p[0], Catch::Matchers::WithinRel(1e-2, 1e-6));
    }
    SECTION("identical runs give identical trajectories") {
        auto run = [] {
            Rng rng(5, 1);
            std::vector<double> p = {0.1, 0.2};
            TensorList pv{view("p", p)};
            AdamState st(2);
            for (int i = 0; i < 50; ++i) {
                std::vector<double> g = {rng.normal(), rng.normal()};
                TensorList gv{view("g", g)};
                adam_step(st, pv, gv, 3e-3, 1e-3);
            }
            return p;
        };
        auto a = run();
        auto b = run();
        REQUIRE(a == b);
    }
    SECTION("non-finite gradient raises a numerical error") {
        std::vector<double> p = {1.0};
        std::vector<double> g = {std::numeric_limits<double>::quiet_NaN()};
        TensorList pv{view("p", p)}, gv{view("g", g)};
        AdamState st(1);
        REQUIRE_THROWS_AS(adam_step(st, pv, gv, 0.1), NumericalError);
    }
}

TEST_CASE("reparameterize") {
    SECTION("clamped floor behaves as the zero-variance limit") {
        std::vector<double> mu = {1.5}, lv = {-1e9};
        Rng r1(9, stream::kReparam);
        auto z = reparameterize(mu, lv, r1);
        REQUIRE(std::fabs(z[0] - 1.5) < 0.05);  // e^{-5} * |eps|
        // identical to an exactly-clamped logvar
        std::vector<double> lv_floor = {kLogvarMin};
        Rng r2(9, stream::kReparam);
        auto z2 = reparameterize(mu, lv_floor, r2);
        REQUIRE(z[0] == z2[0]);
    }
    SECTION("Monte Carlo moments of N(0,1)") {
        const int n = 100000;
        std::vector<double> mu = {0.0}, lv = {0.0};
        Rng rng(123, stream::kReparam);
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            double z = reparameterize(mu, lv, rng)[0];
            sum += z;
            sumsq += z * z;
        }
        const double mean = sum / n;
        const double var = sumsq / n - mean * mean;
        REQUIRE(std::fabs(mean) < 3.0 / std::sqrt(double(n)));
        REQUIRE(std::fabs(var - 1.0) < 0.05);
    }
    SECTION("fixed seed is reproducible") {
        std::vector<double> mu = {1.0}, lv = {0.0};
        Rng r1(42, stream::kReparam), r2(42, stream::kReparam);
        auto z1 = reparameterize(mu, lv, r1);
        auto z2 = reparameterize(mu, lv, r2);
        REQUIRE(z1[0] == z2[0]);
        REQUIRE(z1[0] != 1.0);  // eps drawn
    }
}

TEST_CASE("kl_standard_normal") {
    std::vector<double> z2 = {0.0, 0.0};
    REQUIRE(kl_standard_normal(z2, z2) == 0.0);

    std::vector<double> mu1 = {1.0}, lv0 = {0.0};
    REQUIRE_THAT(kl_standard_normal(mu1, lv0), Catch::Matchers::WithinAbs(0.5, 1e-12));

    SECTION("var=4 closed form and Monte Carlo cross-check") {
        std::vector<double> mu = {0.0}, lv = {std::log(4.0)};
        const double analytic = 0.5 * (4.0 - 1.0 - std::log(4.0));
        REQUIRE_THAT(kl_standard_normal(mu, lv), Catch::Matchers::WithinAbs(analytic, 1e-12));
        REQUIRE_THAT(analytic, Catch::Matchers::WithinAbs(0.80685, 5e-6));

        // MC estimate of E_q[log q - log p], q = N(0,4)
        Rng rng(77, stream::kReparam);
        const int n = 200000;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double z = 2.0 * rng.normal();
            const double logq = -0.5 * std::log(2.0 * std::numbers::pi * 4.0) - z * z / 8.0;
            const double logp = -0.5 * std::log(2.0 * std::numbers::pi) - z * z / 2.0;
            acc += logq - logp;
        }
        REQUIRE(std::fabs(acc / n - analytic) < 0.02);
    }
    SECTION("non-negative everywhere, zero only at (0,0)") {
        Rng rng(5, 99);
        for (int i = 0; i < 200; ++i) {
            std::vector<double> mu = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
            std::vector<double> lv = {rng.uniform(-4, 4), rng.uniform(-4, 4)};
            const double kl = kl_standard_normal(mu, lv);
            REQUIRE(kl >= 0.0);
            if (mu[0] != 0.0 || mu[1] != 0.0 || lv[0] != 0.0 || lv[1] != 0.0) REQUIRE(kl > 0.0);
        }
    }
}

TEST_CASE("gaussian_nll") {
    const double at_mode = gaussian_nll(0.7, 0.7, 0.1);
    REQUIRE_THAT(at_mode, Catch::Matchers::WithinAbs(0.5 * std::log(0.2 * std::numbers::pi), 1e-15));
    REQUIRE_THAT(at_mode, Catch::Matchers::WithinAbs(-0.23236, 1e-5));

    REQUIRE_THAT(gaussian_nll(1.0, 1.0, 1.0 / (2.0 * std::numbers::pi)),
                 Catch::Matchers::WithinAbs(0.0, 1e-15));

    REQUIRE_THAT(gaussian_nll(1.0, 0.0, 0.5),
                 Catch::Matchers::WithinAbs(0.5 * std::log(std::numbers::pi) + 1.0, 1e-15));

    REQUIRE_THROWS_AS(gaussian_nll(0.0, 0.0, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(gaussian_nll(0.0, 0.0, -1.0), std::invalid_argument);
}

TEST_CASE("bernoulli_nll_from_logit") {
    REQUIRE_THAT(bernoulli_nll_from_logit(1.0, 0.0), Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
    REQUIRE_THAT(bernoulli_nll_from_logit(0.0, 0.0), Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));

    const double big = bernoulli_nll_from_logit(1.0, 500.0);
    REQUIRE(std::isfinite(big));
    REQUIRE(big >= 0.0);
    REQUIRE(big < 1e-12);
    REQUIRE(std::isfinite(bernoulli_nll_from_logit(0.0, -500.0)));

    REQUIRE_THROWS_AS(bernoulli_nll_from_logit(0.5, 0.0), std::invalid_argument);

    SECTION("gradient matches finite differences") {
        for (double x : {0.0, 1.0}) {
            for (double l : {-2.0, -0.3, 0.0, 1.7}) {
                const double eps = 1e-6;
                const double fd =
                    (bernoulli_nll_from_logit(x, l + eps) - bernoulli_nll_from_logit(x, l - eps)) /
                    (2 * eps);
                REQUIRE_THAT(bernoulli_nll_dlogit(x, l), Catch::Matchers::WithinAbs(fd, 1e-8));
            }
        }
    }
}

TEST_CASE("rng streams are independent and reproducible") {
    Rng a(17, stream::kMask), b(17, stream::kMask), c(17, stream::kEpisode);
    std::vector<std::uint64_t> xs, ys, zs;
    for (int i = 0; i < 16; ++i) {
        xs.push_back(a.next_u64());
        ys.push_back(b.next_u64());
        zs.push_back(c.next_u64());
    }
    REQUIRE(xs == ys);
    REQUIRE(xs != zs);

    Rng d(17, stream::kMask);
    for (int i = 0; i < 1000; ++i) {
        auto v = d.below(33);
        REQUIRE(v < 33);
    }
}
