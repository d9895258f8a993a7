#pragma once

#include <Eigen/Dense>
#include <optional>

#include "mfest/errors.hpp"

namespace mfest {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Largest supported state dimension. The reference plant is second order;
/// everything here is desk-scale.
inline constexpr int kMaxOrder = 6;

/// Condition-number ceiling beyond which the observability matrix is treated
/// as singular instead of silently amplifying noise.
inline constexpr double kObservabilityCondLimit = 1e12;

/**
 * @brief Observable single-output continuous-time LTI system
 *
 *      x_dot = A x + B u (+ B_d * w,  w constant)
 *      y     = C x
 *
 * with one control input and an optional constant-disturbance channel B_d.
 * Dimensions are validated on construction; observability is checked by the
 * transform constructors below. Instances are immutable and freely shareable
 * across threads.
 */
class ContinuousLtiSystem {
   public:
    ContinuousLtiSystem(Matrix A, Matrix B, Matrix C,
                        std::optional<Vector> disturbance_gain = std::nullopt);

    int order() const { return static_cast<int>(A_.rows()); }
    const Matrix& A() const { return A_; }
    const Matrix& B() const { return B_; }
    const Matrix& C() const { return C_; }
    const std::optional<Vector>& disturbance_gain() const { return disturbance_gain_; }

   private:
    Matrix A_;
    Matrix B_;  // n x 1
    Matrix C_;  // 1 x n
    std::optional<Vector> disturbance_gain_;
};

/**
 * @brief Structural transforms of an observable system
 *
 * O     observability matrix (rows C, CA, ..., CA^{n-1})
 * Toep  strictly lower-triangular feedthrough matrix of Markov parameters
 * Crev  reversed controllability matrix [A^{n-1}B, ..., AB, B]
 * O_inv inverse of O
 */
struct StructuralMatrices {
    Matrix O;
    Matrix Toep;
    Matrix Crev;
    Matrix O_inv;
};

/**
 * @brief Input-output coefficients of y^(n) = -a^T ybar + b^T ubar + d
 *
 * a holds the characteristic-polynomial coefficients [a_0 ... a_{n-1}] (so
 * a_{n-1} = -trace(A), a_0 = +-det(A) sign-matched), b the input polynomial
 * [b_0 ... b_{n-1}], and d the constant-disturbance level in units of y^(n).
 */
struct IoCoefficients {
    Vector a;
    Vector b;
    double d = 0.0;
};

/// Builds O, Toep, Crev and O^{-1}. Throws NotObservable when cond(O)
/// exceeds kObservabilityCondLimit.
StructuralMatrices structural_matrices(const ContinuousLtiSystem& sys);

/// Input-output form of the system. When the system carries a disturbance
/// channel and `disturbance_value` is given, d is the degree-zero coefficient
/// of that channel scaled by the constant's value; otherwise d = 0.
/// The (a, b) relation to the state-space matrices is re-verified internally
/// against the characteristic polynomial to 1e-10 relative.
IoCoefficients io_form(const ContinuousLtiSystem& sys,
                       std::optional<double> disturbance_value = std::nullopt);

/// Observability-canonical state xbar = ybar - Toep * ubar, with vectors
/// ordered [f, f', ..., f^(n-1)].
Vector canonical_state(const Vector& y_bar, const Vector& u_bar, const StructuralMatrices& sm);

/// Original-coordinates state xhat = O^{-1} xbar.
Vector original_state(const StructuralMatrices& sm, const Vector& x_bar);

/// Coefficients of det(sI - A) = s^n + c_{n-1} s^{n-1} + ... + c_0, computed
/// by the Faddeev-LeVerrier recursion. Returned as [c_0, ..., c_{n-1}].
Vector characteristic_polynomial(const Matrix& A);

}  // namespace mfest
