#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <deque>
#include <functional>
#include <random>

#include "doctest.h"
#include "mfest/modfunc.hpp"
#include "mfest/plant.hpp"

using namespace mfest;

namespace {

Vector sampled(double ts, int count, const std::function<double(double)>& f, double t0 = 0.0) {
    Vector v(count);
    for (int k = 0; k < count; ++k) v(k) = f(t0 + k * ts);
    return v;
}

// Exact windowed quadrature of M^i over the zero-order-held staircase of the
// sample deque (newest last). For i >= 1 each interval integrates via the
// kernel antiderivative; for i = 0 via 3-point Gauss-Legendre (exact for the
// polynomial kernels used here).
double staircase_oracle(const ModulatingFunction& phi, int i, const std::deque<double>& window,
                        double ts) {
    const double T = phi.horizon();
    const int n_int = static_cast<int>(window.size()) - 1;
    const auto psi = [&](int order, double sigma) {
        // psi^(order)(sigma) = (-1)^order phi^(order)(T - sigma)
        return (order % 2 == 0 ? 1.0 : -1.0) * phi.eval(order, T - sigma);
    };
    double acc = 0.0;
    for (int m = 0; m < n_int; ++m) {
        const double f_val = window[static_cast<std::size_t>(n_int - 1 - m)];
        const double s0 = m * ts, s1 = (m + 1) * ts;
        double cell;
        if (i >= 1) {
            cell = psi(i - 1, s1) - psi(i - 1, s0);
        } else {
            const double mid = 0.5 * (s0 + s1), half = 0.5 * (s1 - s0);
            const double r = std::sqrt(3.0 / 5.0);
            cell = half * (5.0 / 9.0 * psi(0, mid - r * half) + 8.0 / 9.0 * psi(0, mid) +
                           5.0 / 9.0 * psi(0, mid + r * half));
        }
        acc += f_val * cell;
    }
    return acc;
}

}  // namespace

TEST_CASE("total polynomial kernel t^k (t-T)^k") {
    const auto mf = make_poly_total_mf(2, 1.0);
    CHECK(mf.eval(0, 0.5) == doctest::Approx(0.0625).epsilon(1e-12));
    CHECK(mf.eval(1, 0.0) == doctest::Approx(0.0));
    CHECK(mf.eval(1, 1.0) == doctest::Approx(0.0));
    CHECK(classify(mf, 2) == MfKind::Total);

    for (int k = 1; k <= 7; ++k) {
        const auto m = make_poly_total_mf(k, 3.0);
        CHECK(std::abs(m.eval(0, 0.0)) < 1e-12);
        CHECK(std::abs(m.eval(0, 3.0)) < 1e-12);
        CHECK(classify(m, k) == MfKind::Total);
    }
    CHECK_THROWS_AS(make_poly_total_mf(0, 1.0), std::invalid_argument);

    // Normalized variant shares the roots and peaks at 1.
    const auto nm = make_normalized_total_mf(3, 2000.0);
    CHECK(nm.eval(0, 1000.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(nm.eval(0, 0.0)) < 1e-12);
    CHECK(std::abs(nm.eval(1, 2000.0)) < 1e-12);
    CHECK(classify(nm, 3) == MfKind::Total);
}

TEST_CASE("left monomial kernels (t/T)^{n+j-1}") {
    const auto mf1 = make_poly_left_mf(1, 2, 1.0);
    CHECK(mf1.eval(0, 1.0) == doctest::Approx(1.0));
    CHECK(mf1.eval(1, 1.0) == doctest::Approx(2.0));
    CHECK(mf1.eval(0, 0.0) == doctest::Approx(0.0));
    CHECK(mf1.eval(1, 0.0) == doctest::Approx(0.0));

    const auto mf2 = make_poly_left_mf(2, 2, 2.0);
    CHECK(mf2.eval(0, 2.0) == doctest::Approx(1.0));
    CHECK(mf2.eval(1, 2.0) == doctest::Approx(1.5));

    for (int j = 1; j <= 3; ++j) CHECK(classify(make_poly_left_mf(j, 2, 5.0), 2) == MfKind::Left);
}

TEST_CASE("classification rejects kernels vanishing at neither boundary") {
    Vector c(1);
    c << 1.0;  // phi identically 1
    const auto flat = ModulatingFunction::from_x_polynomial(c, 1.0, 1);
    CHECK_THROWS_AS(classify(flat, 1), NotAModulatingFunction);
}

TEST_CASE("signal window fills, orders and reports time") {
    SignalWindow w(4.0, 1.0);  // N = 4, capacity 5
    CHECK(w.capacity() == 5);
    CHECK(!w.full());
    CHECK_THROWS_AS(w.y_samples(), WindowNotReady);
    for (int k = 0; k < 5; ++k) {
        w.push(10.0 + k, 100.0 + k);
        CHECK(w.full() == (k == 4));
    }
    CHECK(w.newest_time() == doctest::Approx(4.0));
    const Vector y = w.y_samples();
    for (int k = 0; k < 5; ++k) CHECK(y(k) == doctest::Approx(100.0 + k));

    // Ring keeps the most recent capacity() samples.
    w.push(15.0, 105.0);
    const Vector y2 = w.y_samples();
    CHECK(y2(0) == doctest::Approx(101.0));
    CHECK(y2(4) == doctest::Approx(105.0));
    CHECK(w.newest_time() == doctest::Approx(5.0));

    CHECK_THROWS_AS(SignalWindow(4.5, 1.0), std::invalid_argument);
}

TEST_CASE("apply_l closed-form anchors") {
    const auto mf = make_poly_total_mf(2, 1.0);
    const double ts = 1e-3;
    const int count = 1001;
    const Vector ones = Vector::Ones(count);

    // int_0^1 t^2 (t-1)^2 dt = 1/30.
    CHECK(apply_l(mf, 0, ones, ts) == doctest::Approx(1.0 / 30.0).epsilon(5e-3));
    // int phi'' = phi'(1) - phi'(0) = 0 for a total kernel.
    CHECK(std::abs(apply_l(mf, 2, ones, ts)) < 5e-3);

    // Trapezoid agrees for total kernels at i < k (boundary samples weightless).
    const Vector f = sampled(ts, count, [](double t) { return std::sin(3.0 * t) + 2.0; });
    CHECK(apply_l(mf, 0, f, ts) ==
          doctest::Approx(apply_l(mf, 0, f, ts, QuadratureScheme::Trapezoid)).epsilon(1e-12));
}

TEST_CASE("operator linearity is exact in the discretization") {
    const auto mf = make_poly_total_mf(3, 2.0);
    const double ts = 1e-2;
    const int count = 201;
    const Vector f = sampled(ts, count, [](double t) { return std::sin(2.0 * t); });
    const Vector g = sampled(ts, count, [](double t) { return std::exp(0.3 * t); });
    for (int i = 0; i <= 3; ++i) {
        const double lhs = apply_l(mf, i, Vector(2.5 * f - 1.5 * g), ts);
        const double rhs = 2.5 * apply_l(mf, i, f, ts) - 1.5 * apply_l(mf, i, g, ts);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("integration-by-parts identity and first-order convergence") {
    // Window [t-T, t] with T = 0.5 ending at t = 1.3; f = sin has analytic
    // derivatives as the independent oracle.
    const double T = 0.5, t_end = 1.3;
    const auto mf = make_poly_total_mf(2, T);

    const auto residual = [&](double ts, int i) {
        const int count = static_cast<int>(std::llround(T / ts)) + 1;
        const double t0 = t_end - T;
        const Vector f = sampled(ts, count, [](double t) { return std::sin(t); }, t0);
        const Vector fi =
            sampled(ts, count, [i](double t) { return std::sin(t + i * M_PI_2); }, t0);
        const double direct = apply_l(mf, 0, fi, ts);
        const double parts = apply_l(mf, i, f, ts);
        return std::abs(direct - parts) / std::max(1.0, std::abs(parts));
    };

    for (int i = 1; i <= 2; ++i) {
        const double r1 = residual(1e-3, i);
        CHECK(r1 < 1e-3);
        const double r2 = residual(5e-4, i);
        CHECK(r2 <= 0.65 * r1 + 1e-12);  // halving ts at least halves the error
    }
    // i = 0 is the same sum on both sides.
    CHECK(residual(1e-3, 0) == doctest::Approx(0.0));
}

TEST_CASE("left-kernel boundary property") {
    // L0_l[f'] = phi_l(T) f(t) + L1_l[f] for a left kernel of order >= 1.
    const double T = 0.5, t_end = 2.0, ts = 1e-4;
    const int count = static_cast<int>(std::llround(T / ts)) + 1;
    const auto mf = make_poly_left_mf(1, 2, T);
    const double t0 = t_end - T;
    const Vector f = sampled(ts, count, [](double t) { return std::sin(t); }, t0);
    const Vector fp = sampled(ts, count, [](double t) { return std::cos(t); }, t0);

    const double lhs = apply_l(mf, 0, fp, ts, QuadratureScheme::Trapezoid);
    const double rhs =
        mf.eval(0, T) * std::sin(t_end) + apply_l(mf, 1, f, ts, QuadratureScheme::Trapezoid);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));

    // Second derivative: adds -phi'(T) f(t).
    const Vector fpp = sampled(ts, count, [](double t) { return -std::sin(t); }, t0);
    const double lhs2 = apply_l(mf, 0, fpp, ts, QuadratureScheme::Trapezoid);
    const double rhs2 = mf.eval(0, T) * std::cos(t_end) - mf.eval(1, T) * std::sin(t_end) +
                        apply_l(mf, 2, f, ts, QuadratureScheme::Trapezoid);
    CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-4));
}

TEST_CASE("fir weights integrate the interpolant exactly") {
    const double T = 1.0, ts = 0.05;
    const int count = 21;
    const auto mf = make_poly_total_mf(2, T);

    // Constant signal: held and interpolated integrals equal 1/30 exactly.
    const Vector zoh_w = l_fir_weights(mf, 0, count, ts, SignalHold::Zoh);
    const Vector foh_w = l_fir_weights(mf, 0, count, ts, SignalHold::Foh);
    CHECK(zoh_w.sum() == doctest::Approx(1.0 / 30.0).epsilon(1e-12));
    CHECK(foh_w.sum() == doctest::Approx(1.0 / 30.0).epsilon(1e-12));

    // Linear signal f = t: the interpolant is exact, integral is 1/60.
    const Vector ramp = sampled(ts, count, [](double t) { return t; });
    CHECK(foh_w.dot(ramp) == doctest::Approx(1.0 / 60.0).epsilon(1e-12));

    // Derivative orders: weights of L^i applied to a constant reproduce the
    // exact boundary difference (zero for i <= k - 1).
    const Vector w1 = l_fir_weights(mf, 1, count, ts, SignalHold::Foh);
    CHECK(std::abs(w1.sum()) < 1e-14);
}

TEST_CASE("sample-space kernel bank enforces W = I and the boundary rows") {
    // Pulse-excited RC window.
    const RcParams p{10.0, 50.0, 2.0, 5.0, 20.0};
    InputProfile pulse;
    pulse.kind = InputProfile::Kind::Pulse;
    pulse.amplitude = 1.5;
    pulse.period = 120.0;
    const double ts = 2.0, T = 200.0;
    const auto traj = simulate(rc_system(p), pulse, rc_equilibrium(p), ts, 400.0, p.t_r);

    SignalWindow w(T, ts);
    for (std::size_t k = 0; k < traj.t.size(); ++k) w.push(traj.u[k], traj.y[k]);
    REQUIRE(w.full());

    const AlphaBank bank = solve_alpha_bank(w, 2, true);
    CHECK(bank.kernels.size() == 5);
    CHECK(bank.w_residual <= 1e-8);
    CHECK(bank.gamma_residual <= 1e-8);
    CHECK(bank.rank == 7);

    // The reconstruction path must agree with alpha_l_value on raw samples.
    const Vector y = w.y_samples();
    const Vector u = w.u_samples();
    const Vector ones = Vector::Ones(y.size());
    for (int j = 0; j < 5; ++j) {
        const auto& kern = bank.kernels[static_cast<std::size_t>(j)];
        CHECK(alpha_l_value(kern, 0, ones) == doctest::Approx(bank.w(0, j)).epsilon(1e-9));
        CHECK(alpha_l_value(kern, 0, y) == doctest::Approx(bank.w(1, j)).epsilon(1e-9));
        CHECK(alpha_l_value(kern, 1, y) == doctest::Approx(bank.w(2, j)).epsilon(1e-9));
        CHECK(alpha_l_value(kern, 0, u) == doctest::Approx(bank.w(3, j)).epsilon(1e-9));
        CHECK(alpha_l_value(kern, 1, u) == doctest::Approx(bank.w(4, j)).epsilon(1e-9));
    }

    SUBCASE("zero windows are rank deficient") {
        SignalWindow dead(T, ts);
        for (int k = 0; k <= 100; ++k) dead.push(0.0, 0.0);
        try {
            solve_alpha_bank(dead, 2, true);
            FAIL("expected RankDeficient");
        } catch (const RankDeficient& e) {
            CHECK(e.achieved_rank < e.required_rank);
        }
    }
    SUBCASE("single-channel bank for an autonomous oscillator") {
        SignalWindow osc(2.0, 0.01);
        for (int k = 0; k <= 200; ++k) osc.push(0.0, 15.0 * std::sin(2.0 * 0.01 * k));
        const AlphaBank yb =
            solve_alpha_bank({{osc.y_samples(), ChannelKind::Sampled}}, 2, false, 0.01);
        CHECK(yb.kernels.size() == 2);
        CHECK(yb.w_residual <= 1e-8);
        CHECK(yb.gamma_residual <= 1e-8);
    }
}

TEST_CASE("generator realizes the reversed kernel") {
    const double T = 1.5;
    const auto phi = make_poly_total_mf(2, T);
    const MfGenerator gen = make_mf_generator(phi);
    CHECK(gen.dimension() == 5);

    // psi(t) = phi(T - t) on a grid, and the degree-4 chain annihilates the
    // fifth derivative.
    for (int g = 0; g <= 40; ++g) {
        const double t = T * g / 40.0;
        CHECK(gen.eval(0, t) == doctest::Approx(phi.eval(0, T - t)).epsilon(1e-9));
    }
    CHECK(std::abs(gen.eval(5, 0.7)) < 1e-12);
    CHECK(gen.kernel_mass() == doctest::Approx(std::pow(T, 5) / 30.0).epsilon(1e-10));

    SUBCASE("reversal turns left kernels into right ones") {
        const auto left = make_poly_left_mf(1, 2, T);
        auto gen_ptr = std::make_shared<const MfGenerator>(make_mf_generator(left));
        const auto reversed = as_modulating_function(gen_ptr, 2);
        CHECK(classify(left, 2) == MfKind::Left);
        CHECK(classify(reversed, 2) == MfKind::Right);
    }
}

TEST_CASE("exponential generator kernels") {
    const double T = 2.0;
    SUBCASE("vanish_order 0 is a plain stable combination") {
        const MfGenerator gen = make_mf_generator_exponential({1e-6}, 0, T);
        CHECK(gen.eval(0, 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(gen.eval(0, T) == doctest::Approx(1.0).epsilon(1e-3));
        CHECK(gen.lambda()(0, 0) < 0.0);
    }
    SUBCASE("boundary-vanishing combination") {
        const MfGenerator gen = make_mf_generator_exponential({0.5, 1.0, 1.7, 2.4, 3.3}, 2, T);
        for (int i = 0; i < 2; ++i) {
            CHECK(std::abs(gen.eval(i, 0.0)) < 1e-9);
            CHECK(std::abs(gen.eval(i, T)) < 1e-9);
        }
        double peak = 0.0;
        for (int g = 0; g <= 100; ++g) peak = std::max(peak, std::abs(gen.eval(0, T * g / 100)));
        CHECK(peak == doctest::Approx(1.0).epsilon(1e-2));
        // All modes stable.
        for (int i = 0; i < gen.dimension(); ++i) CHECK(gen.lambda()(i, i) < 0.0);
    }
    SUBCASE("input guards") {
        CHECK_THROWS_AS(make_mf_generator_exponential({1.0, 1.0, 2.0}, 1, T),
                        std::invalid_argument);
        CHECK_THROWS_AS(make_mf_generator_exponential({1.0, 2.0}, 1, T), std::invalid_argument);
    }
}

TEST_CASE("windowed filter reads match the closed-form anchors") {
    const double T = 1.0, ts = 1e-3;
    const MfGenerator gen = make_mf_generator(make_poly_total_mf(2, T));

    SUBCASE("zero input stays zero") {
        MFilter f(gen, ts, 2);
        for (int k = 0; k <= 1200; ++k) f.step(0.0);
        for (int i = 0; i <= 2; ++i) CHECK(f.read(i) == doctest::Approx(0.0));
    }
    SUBCASE("constant input integrates the kernel mass") {
        MFilter f(gen, ts, 2);
        CHECK(!f.ready());
        int ticks = 0;
        while (!f.ready()) {
            f.step(1.0);
            ++ticks;
        }
        CHECK(ticks == 1001);  // ready exactly after a full horizon
        CHECK(f.read(0) == doctest::Approx(1.0 / 30.0).epsilon(1e-6));
        for (int extra = 0; extra < 500; ++extra) f.step(1.0);
        CHECK(f.read(0) == doctest::Approx(1.0 / 30.0).epsilon(1e-6));
        CHECK(std::abs(f.read(2)) < 1e-9);
    }
    SUBCASE("reads before a full horizon throw") {
        MFilter f(gen, ts, 2);
        f.step(1.0);
        CHECK_THROWS_AS(f.read(0), WindowNotReady);
    }
}

TEST_CASE("filter equals the staircase quadrature oracle across rebasing") {
    // Noisy sine through a long run (several rebase periods); every read is
    // checked against the exact staircase integral of the same samples.
    const double T = 0.5, ts = 0.01;
    const int n_window = 51;
    const auto phi = make_poly_total_mf(2, T);
    const MfGenerator gen = make_mf_generator(phi);
    MFilter f(gen, ts, 2);

    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> noise(-0.25, 0.25);
    std::deque<double> window;
    for (int k = 0; k <= 1600; ++k) {
        const double sample = 15.0 * std::sin(2.0 * k * ts) + noise(rng);
        f.step(sample);
        window.push_back(sample);
        if (window.size() > static_cast<std::size_t>(n_window)) window.pop_front();
        if (!f.ready()) continue;
        for (int i = 0; i <= 2; ++i) {
            const double oracle = staircase_oracle(phi, i, window, ts);
            CHECK(f.read(i) == doctest::Approx(oracle).epsilon(1e-10).scale(1.0));
        }
    }
}

TEST_CASE("gramian filters match per-entry scalar filters") {
    const double T = 0.8, ts = 0.01;
    const MfGenerator gen = make_mf_generator(make_poly_total_mf(2, T));
    const int m = 3;
    GramianFilters gf(gen, ts, m);
    std::vector<MFilter> scalar_h;
    std::vector<MFilter> scalar_g;
    for (int i = 0; i < m; ++i) scalar_h.emplace_back(gen, ts, 0);
    for (int i = 0; i < m * m; ++i) scalar_g.emplace_back(gen, ts, 0);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int k = 0; k <= 300; ++k) {
        Vector w(m);
        for (int i = 0; i < m; ++i) w(i) = dist(rng);
        const double z = dist(rng);
        const Vector h = w * z;
        const Matrix g = w * w.transpose();
        gf.step(h, g);
        for (int i = 0; i < m; ++i) scalar_h[static_cast<std::size_t>(i)].step(h(i));
        for (int c = 0; c < m; ++c)
            for (int r = 0; r < m; ++r) scalar_g[static_cast<std::size_t>(c * m + r)].step(g(r, c));
        if (!gf.ready()) continue;
        const Vector mh = gf.read_h();
        const Matrix mg = gf.read_g();
        for (int i = 0; i < m; ++i)
            CHECK(mh(i) ==
                  doctest::Approx(scalar_h[static_cast<std::size_t>(i)].read(0)).epsilon(1e-10));
        for (int c = 0; c < m; ++c)
            for (int r = 0; r < m; ++r)
                CHECK(mg(r, c) ==
                      doctest::Approx(scalar_g[static_cast<std::size_t>(c * m + r)].read(0))
                          .epsilon(1e-10));
    }

    SUBCASE("constant regressors pull the kernel mass out") {
        GramianFilters gf2(gen, ts, 2);
        Vector w(2);
        w << 1.5, -0.5;
        const Matrix g = w * w.transpose();
        for (int k = 0; k <= 100; ++k) gf2.step(Vector(w * 2.0), g);
        const double mass = gen.kernel_mass();
        CHECK((gf2.read_g() - mass * g).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((gf2.read_h() - mass * 2.0 * w).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("zero input gives zero outputs") {
        GramianFilters gf3(gen, ts, 2);
        for (int k = 0; k <= 100; ++k) gf3.step(Vector::Zero(2), Matrix::Zero(2, 2));
        CHECK(gf3.read_h().cwiseAbs().maxCoeff() == 0.0);
        CHECK(gf3.read_g().cwiseAbs().maxCoeff() == 0.0);
    }
}
