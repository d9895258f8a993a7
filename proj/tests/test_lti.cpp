#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "mfest/lti.hpp"
#include "mfest/plant.hpp"

using namespace mfest;

namespace {

// Reference RC configuration used throughout: C_m=10, C_s=50, R_ms=2, R_sr=5.
RcParams reference_params() { return RcParams{10.0, 50.0, 2.0, 5.0, 20.0}; }

// Random observable system with entries in [-1, 1].
ContinuousLtiSystem random_observable(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    while (true) {
        Matrix A(n, n), B(n, 1), C(1, n);
        for (int i = 0; i < n; ++i) {
            B(i, 0) = dist(rng);
            C(0, i) = dist(rng);
            for (int j = 0; j < n; ++j) A(i, j) = dist(rng);
        }
        try {
            ContinuousLtiSystem sys(A, B, C);
            structural_matrices(sys);
            return sys;
        } catch (const NotObservable&) {
        }
    }
}

}  // namespace

TEST_CASE("structural matrices of the reference RC system") {
    const auto sm = structural_matrices(rc_system(reference_params()));

    // Hand product: C = [1 0], CA = first row of A.
    CHECK(sm.O(0, 0) == doctest::Approx(1.0));
    CHECK(sm.O(0, 1) == doctest::Approx(0.0));
    CHECK(sm.O(1, 0) == doctest::Approx(-0.05));
    CHECK(sm.O(1, 1) == doctest::Approx(0.05));

    CHECK((sm.O_inv * sm.O - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);

    // Toep strictly lower triangular, Crev ends with B.
    CHECK(sm.Toep(0, 0) == 0.0);
    CHECK(sm.Toep(0, 1) == 0.0);
    CHECK(sm.Toep(1, 1) == 0.0);
    CHECK(sm.Toep(1, 0) == doctest::Approx(0.1));  // C B
    CHECK(sm.Crev(0, 1) == doctest::Approx(0.1));
    CHECK(sm.Crev(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("first-order degenerate structural matrices") {
    Matrix A(1, 1), B(1, 1), C(1, 1);
    A << -0.3;
    B << 2.0;
    C << 1.0;
    const auto sm = structural_matrices(ContinuousLtiSystem(A, B, C));
    CHECK(sm.O(0, 0) == doctest::Approx(1.0));
    CHECK(sm.Toep(0, 0) == 0.0);
    CHECK(sm.Crev(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("rank-deficient observability is rejected") {
    Matrix A(2, 2), B(2, 1), C(1, 2);
    A << 1.0, 0.0, 0.0, 2.0;
    B << 1.0, 1.0;
    C << 1.0, 0.0;
    CHECK_THROWS_AS(structural_matrices(ContinuousLtiSystem(A, B, C)), NotObservable);
}

TEST_CASE("io_form of the reference RC system") {
    const auto io = io_form(rc_system(reference_params()), 20.0);
    // Hand evaluation of the physical coefficient formulas.
    CHECK(io.a(0) == doctest::Approx(2.0e-4).epsilon(1e-10));
    CHECK(io.a(1) == doctest::Approx(0.064).epsilon(1e-10));
    CHECK(io.b(0) == doctest::Approx(1.4e-3).epsilon(1e-10));
    CHECK(io.b(1) == doctest::Approx(0.1).epsilon(1e-10));
    CHECK(io.d == doctest::Approx(2.0e-4 * 20.0).epsilon(1e-10));

    // Cross-check against trace and determinant of A.
    const Matrix A = rc_system(reference_params()).A();
    CHECK(io.a(1) == doctest::Approx(-A.trace()).epsilon(1e-12));
    CHECK(io.a(0) == doctest::Approx(A.determinant()).epsilon(1e-12));
}

TEST_CASE("io_form of the double integrator") {
    Matrix A(2, 2), B(2, 1), C(1, 2);
    A << 0.0, 1.0, 0.0, 0.0;
    B << 0.0, 1.0;
    C << 1.0, 0.0;
    const auto io = io_form(ContinuousLtiSystem(A, B, C));
    CHECK(io.a(0) == doctest::Approx(0.0));
    CHECK(io.a(1) == doctest::Approx(0.0));
    CHECK(io.b(0) == doctest::Approx(1.0));
    CHECK(io.b(1) == doctest::Approx(0.0));
    CHECK(io.d == 0.0);
}

TEST_CASE("round trip through the published coefficient set") {
    // Second-order coefficients reported for the heat-flow rig.
    IoCoefficients table;
    table.a = Vector(2);
    table.a << 9.958e-6, 0.02449;
    table.b = Vector(2);
    table.b << 6.81e-5, 0.09236;
    table.d = 2.1770e-4;

    const RcParams p = io_to_physical(table);
    const auto io = io_form(rc_system(p), p.t_r);
    CHECK(io.a(0) == doctest::Approx(table.a(0)).epsilon(1e-9));
    CHECK(io.a(1) == doctest::Approx(table.a(1)).epsilon(1e-9));
    CHECK(io.b(0) == doctest::Approx(table.b(0)).epsilon(1e-9));
    CHECK(io.b(1) == doctest::Approx(table.b(1)).epsilon(1e-9));
    CHECK(io.d == doctest::Approx(table.d).epsilon(1e-9));
}

TEST_CASE("canonical state subtracts the input feedthrough") {
    StructuralMatrices sm;
    sm.Toep = Matrix::Zero(2, 2);
    sm.Toep(1, 0) = 0.1;
    sm.O = Matrix::Identity(2, 2);
    sm.O_inv = Matrix::Identity(2, 2);
    sm.Crev = Matrix::Identity(2, 2);

    Vector y_bar(2), u_bar(2);
    y_bar << 3.0, 1.0;
    u_bar << 2.0, 5.0;

    SUBCASE("zero input is the identity") {
        const Vector x = canonical_state(y_bar, Vector::Zero(2), sm);
        CHECK(x(0) == doctest::Approx(3.0));
        CHECK(x(1) == doctest::Approx(1.0));
    }
    SUBCASE("direct 2x2 arithmetic") {
        const Vector x = canonical_state(y_bar, u_bar, sm);
        CHECK(x(0) == doctest::Approx(3.0));
        CHECK(x(1) == doctest::Approx(0.8));
    }
    SUBCASE("dimension mismatch is rejected") {
        CHECK_THROWS_AS(canonical_state(Vector::Zero(3), u_bar, sm), std::invalid_argument);
    }
}

TEST_CASE("original state inverts the observability map") {
    const auto sm = structural_matrices(rc_system(reference_params()));

    // Hand-inverted O: [[1,0],[-0.05,0.05]]^{-1} = [[1,0],[1,20]].
    Vector x_bar(2);
    x_bar << 1.0, 0.0;
    const Vector x = original_state(sm, x_bar);
    CHECK(x(0) == doctest::Approx(1.0));
    CHECK(x(1) == doctest::Approx(1.0));

    SUBCASE("identity O") {
        StructuralMatrices id;
        id.O = Matrix::Identity(2, 2);
        id.O_inv = Matrix::Identity(2, 2);
        Vector v(2);
        v << 4.0, -3.0;
        CHECK((original_state(id, v) - v).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("inverse round trip on random vectors") {
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> dist(-5.0, 5.0);
        for (int rep = 0; rep < 20; ++rep) {
            Vector x0(2);
            x0 << dist(rng), dist(rng);
            const Vector back = original_state(sm, sm.O * x0);
            CHECK((back - x0).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("canonical state recovers the simulator state") {
    // Oracle: RK4 trajectory with exact derivative stacks from the ODE.
    const auto p = reference_params();
    const auto sys = rc_system(p);
    const auto sm = structural_matrices(sys);

    InputProfile sine;
    sine.kind = InputProfile::Kind::Sine;
    sine.amplitude = 1.5;
    sine.period = 200.0;
    const auto traj = simulate(sys, sine, rc_equilibrium(p), 0.05, 400.0, p.t_r);

    const double omega = 2.0 * 3.14159265358979323846 / sine.period;
    for (std::size_t k = 100; k < traj.t.size(); k += 1000) {
        const double tk = traj.t[k];
        const Vector x = traj.x_true.row(static_cast<Eigen::Index>(k)).transpose();
        Vector u_bar(2), y_bar(2);
        u_bar << sine.amplitude * std::sin(omega * tk),
            sine.amplitude * omega * std::cos(omega * tk);
        // y = C x; y' = C A x + C B u + C B_d T_r.
        y_bar(0) = (sys.C() * x)(0, 0);
        y_bar(1) = (sys.C() * sys.A() * x)(0, 0) + (sys.C() * sys.B())(0, 0) * u_bar(0) +
                   (sys.C() * *sys.disturbance_gain())(0) * p.t_r;
        const Vector x_hat = original_state(sm, canonical_state(y_bar, u_bar, sm));
        CHECK((x_hat - x).cwiseAbs().maxCoeff() < 1e-3);
    }
}

TEST_CASE("io identity holds along simulated trajectories") {
    // For random observable systems, y^(n) = -a^T ybar + b^T ubar with
    // derivatives obtained by repeated application of the state equation.
    std::mt19937_64 rng(42);
    for (int n = 1; n <= 4; ++n) {
        for (int rep = 0; rep < 5; ++rep) {
            const auto sys = random_observable(n, rng);
            const auto io = io_form(sys);

            // Smooth analytic input with known derivatives: u = sin(w t).
            const double omega = 0.7;
            InputProfile profile;
            profile.kind = InputProfile::Kind::Sine;
            profile.amplitude = 1.0;
            profile.period = 2.0 * 3.14159265358979323846 / omega;

            Vector x0 = Vector::Zero(n);
            for (int i = 0; i < n; ++i) x0(i) = 0.3 * (i + 1);
            const auto traj = simulate(sys, profile, x0, 1e-3, 2.0);

            const Eigen::Index k = static_cast<Eigen::Index>(traj.t.size()) - 1;
            const double tk = traj.t[static_cast<std::size_t>(k)];
            const Vector x = traj.x_true.row(k).transpose();

            Vector u_bar(n), du(n + 1);
            for (int i = 0; i <= n; ++i) {
                // d^i/dt^i sin(w t)
                const double phase = omega * tk + i * 3.14159265358979323846 / 2.0;
                du(i) = std::pow(omega, i) * std::sin(phase);
            }
            for (int i = 0; i < n; ++i) u_bar(i) = du(i);

            // y^(i) = C A^i x + sum_{m<i} C A^{i-1-m} B u^(m).
            Vector y_bar(n);
            double y_n = 0.0;
            for (int i = 0; i <= n; ++i) {
                Matrix Ai = Matrix::Identity(n, n);
                for (int p = 0; p < i; ++p) Ai = Ai * sys.A();
                double v = (sys.C() * Ai * x)(0, 0);
                for (int m = 0; m < i; ++m) {
                    Matrix Ap = Matrix::Identity(n, n);
                    for (int p = 0; p < i - 1 - m; ++p) Ap = Ap * sys.A();
                    v += (sys.C() * Ap * sys.B())(0, 0) * du(m);
                }
                if (i < n) y_bar(i) = v;
                else y_n = v;
            }

            const double rhs = -io.a.dot(y_bar) + io.b.dot(u_bar);
            const double scale = std::max({1.0, std::abs(y_n), std::abs(rhs)});
            CHECK(std::abs(y_n - rhs) / scale < 1e-8);
        }
    }
}

TEST_CASE("characteristic polynomial matches a for random systems") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        const auto sys = random_observable(2, rng);
        const auto io = io_form(sys);
        CHECK(io.a(1) == doctest::Approx(-sys.A().trace()).epsilon(1e-12));
        CHECK(io.a(0) == doctest::Approx(sys.A().determinant()).epsilon(1e-12));
    }
}

TEST_CASE("construction guards") {
    Matrix A(2, 2), B(2, 1), C(1, 2);
    A.setZero();
    B.setZero();
    C.setZero();
    CHECK_THROWS_AS(ContinuousLtiSystem(Matrix::Zero(2, 3), B, C), std::invalid_argument);
    CHECK_THROWS_AS(ContinuousLtiSystem(A, Matrix::Zero(3, 1), C), std::invalid_argument);
    CHECK_THROWS_AS(ContinuousLtiSystem(A, B, Matrix::Zero(1, 3)), std::invalid_argument);
    CHECK_THROWS_AS(ContinuousLtiSystem(Matrix::Zero(7, 7), Matrix::Zero(7, 1), Matrix::Zero(1, 7)),
                    std::invalid_argument);
}
