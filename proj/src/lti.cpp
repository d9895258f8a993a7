#include "mfest/lti.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace mfest {

ContinuousLtiSystem::ContinuousLtiSystem(Matrix A, Matrix B, Matrix C,
                                         std::optional<Vector> disturbance_gain)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)),
      disturbance_gain_(std::move(disturbance_gain)) {
    const auto n = A_.rows();
    if (n < 1 || n > kMaxOrder) {
        throw std::invalid_argument("system order must be in [1, " + std::to_string(kMaxOrder) +
                                    "], got " + std::to_string(n));
    }
    if (A_.cols() != n) throw std::invalid_argument("A must be square");
    if (B_.rows() != n || B_.cols() != 1)
        throw std::invalid_argument("B must be n x 1 (single control input)");
    if (C_.rows() != 1 || C_.cols() != n) throw std::invalid_argument("C must be 1 x n");
    if (disturbance_gain_ && disturbance_gain_->size() != n)
        throw std::invalid_argument("disturbance gain must be length n");
}

namespace {

Matrix observability_matrix(const Matrix& A, const Matrix& C) {
    const auto n = A.rows();
    Matrix O(n, n);
    RowVector row = C.row(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        O.row(i) = row;
        row = row * A;
    }
    return O;
}

// Strictly lower-triangular Toeplitz of Markov parameters C A^k b.
Matrix toeplitz_feedthrough(const Matrix& A, const Vector& b, const Matrix& C) {
    const auto n = A.rows();
    Matrix T = Matrix::Zero(n, n);
    Vector col = b;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
        const double markov = (C * col)(0, 0);  // C A^k b
        for (Eigen::Index i = k + 1; i < n; ++i) T(i, i - k - 1) = markov;
        col = A * col;
    }
    return T;
}

Matrix reversed_controllability(const Matrix& A, const Vector& b) {
    const auto n = A.rows();
    Matrix Crev(n, n);
    Vector col = b;
    for (Eigen::Index j = n - 1; j >= 0; --j) {
        Crev.col(j) = col;  // columns A^{n-1}b, ..., Ab, b
        col = A * col;
    }
    return Crev;
}

// (a, b) coefficients of one input channel against a fixed C A^n O^{-1} row.
RowVector channel_b(const Matrix& A, const Vector& b, const Matrix& C, const RowVector& CAnOinv) {
    return C * reversed_controllability(A, b) - CAnOinv * toeplitz_feedthrough(A, b, C);
}

}  // namespace

StructuralMatrices structural_matrices(const ContinuousLtiSystem& sys) {
    const Matrix O = observability_matrix(sys.A(), sys.C());

    Eigen::JacobiSVD<Matrix> svd(O);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(cond < kObservabilityCondLimit)) throw NotObservable(cond);

    StructuralMatrices sm;
    sm.O = O;
    sm.O_inv = O.partialPivLu().solve(Matrix::Identity(sys.order(), sys.order()));
    sm.Toep = toeplitz_feedthrough(sys.A(), sys.B().col(0), sys.C());
    sm.Crev = reversed_controllability(sys.A(), sys.B().col(0));
    return sm;
}

Vector characteristic_polynomial(const Matrix& A) {
    const auto n = A.rows();
    // Faddeev-LeVerrier: M_1 = I, c_{n-1} = -tr(A M_1), ...
    Vector coeffs(n);  // coeffs[i] multiplies s^i
    Matrix M = Matrix::Identity(n, n);
    double c = 1.0;  // leading coefficient
    for (Eigen::Index k = 1; k <= n; ++k) {
        const Matrix AM = A * M;
        c = -AM.trace() / static_cast<double>(k);
        coeffs(n - k) = c;
        M = AM + c * Matrix::Identity(n, n);
    }
    return coeffs;
}

IoCoefficients io_form(const ContinuousLtiSystem& sys, std::optional<double> disturbance_value) {
    const auto sm = structural_matrices(sys);
    const auto n = sys.order();

    // C A^n O^{-1} equals -[a_0, ..., a_{n-1}] of the monic characteristic
    // polynomial; keep a with the char-poly sign so a_{n-1} = -trace(A).
    RowVector CAn = sys.C().row(0);
    for (int i = 0; i < n; ++i) CAn = CAn * sys.A();
    const RowVector CAnOinv = CAn * sm.O_inv;

    IoCoefficients io;
    io.a = -CAnOinv.transpose();
    io.b = channel_b(sys.A(), sys.B().col(0), sys.C(), CAnOinv).transpose();
    io.d = 0.0;
    if (sys.disturbance_gain() && disturbance_value) {
        const RowVector bd = channel_b(sys.A(), *sys.disturbance_gain(), sys.C(), CAnOinv);
        io.d = bd(0) * *disturbance_value;  // constant input: only degree 0 survives
    }

    // Cross-check against the characteristic polynomial (independent route).
    const Vector cp = characteristic_polynomial(sys.A());
    const double scale = std::max(1.0, cp.cwiseAbs().maxCoeff());
    if (((io.a - cp).cwiseAbs().maxCoeff()) > 1e-10 * scale) {
        throw EstimationError("io_form self-check failed: a does not match char(A)");
    }
    return io;
}

Vector canonical_state(const Vector& y_bar, const Vector& u_bar, const StructuralMatrices& sm) {
    if (y_bar.size() != sm.Toep.rows() || u_bar.size() != sm.Toep.cols())
        throw std::invalid_argument("canonical_state: dimension mismatch");
    return y_bar - sm.Toep * u_bar;
}

Vector original_state(const StructuralMatrices& sm, const Vector& x_bar) {
    if (x_bar.size() != sm.O_inv.cols())
        throw std::invalid_argument("original_state: dimension mismatch");
    return sm.O_inv * x_bar;
}

}  // namespace mfest
