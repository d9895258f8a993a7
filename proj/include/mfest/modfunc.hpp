#pragma once

#include <deque>
#include <memory>
#include <vector>

#include "mfest/lti.hpp"

namespace mfest {

class MfGenerator;

enum class MfKind { Total, Left, Right };

/// Quadrature rule used by apply_l. Rectangle is the plain left-endpoint
/// Riemann sum matching the sample-space kernel solver; Trapezoid halves the
/// two boundary weights.
enum class QuadratureScheme { Rectangle, Trapezoid };

/// How a sampled signal is reconstructed between grid points when a windowed
/// integral is evaluated exactly per interval: held at the left sample (Zoh),
/// linearly interpolated (Foh), or fitted by the causal quadratic through the
/// last three samples (Qoh).
enum class SignalHold { Zoh, Foh, Qoh };

/**
 * @brief A modulating-function kernel on [0, T]
 *
 * Represented either as a polynomial in the normalized variable x = t/T
 * (numerically stable for long horizons) or by a state-space generator
 * (see MfGenerator). `order` is the number of boundary derivatives the
 * kernel is declared to control.
 */
class ModulatingFunction {
   public:
    static ModulatingFunction from_x_polynomial(Vector x_coeffs, double horizon, int order);
    static ModulatingFunction from_generator(std::shared_ptr<const MfGenerator> gen, int order);

    double horizon() const { return horizon_; }
    int order() const { return order_; }

    /// phi^(derivative)(t) for t in [0, T].
    double eval(int derivative, double t) const;

    bool is_polynomial() const { return !generator_; }
    const Vector& x_coeffs() const { return x_coeffs_; }

   private:
    ModulatingFunction() = default;
    Vector x_coeffs_;  // phi(t) = sum_j c_j (t/T)^j when polynomial
    std::shared_ptr<const MfGenerator> generator_;
    double horizon_ = 0.0;
    int order_ = 0;
};

/// phi(t) = t^k (t - T)^k, a total modulating function of order k.
ModulatingFunction make_poly_total_mf(int k, double T);

/// Same family scaled to peak magnitude 1: (4 x (1-x))^k with x = t/T.
/// Preferred for estimator banks at long horizons.
ModulatingFunction make_normalized_total_mf(int k, double T);

/// Asymmetric normalized total kernel x^a (1-x)^b (order min(a, b)), peaking
/// at x = a/(a+b). Banks mixing asymmetries stay far better conditioned than
/// the nested symmetric family, whose members are nearly collinear.
ModulatingFunction make_normalized_total_mf(int a, int b, double T);

/// Diverse bank of `count` total kernels of order >= n for a batch/Gramian
/// regression: the symmetric member plus increasingly skewed pairs.
std::vector<ModulatingFunction> make_total_mf_bank(int n, int count, double T);

/// phi_{l,j}(t) = (t/T)^{n+j-1}: derivatives 0..n-1 vanish at t = 0 only.
ModulatingFunction make_poly_left_mf(int j, int n, double T);

/// Boundary classification per the vanishing pattern of derivatives 0..k-1,
/// with a 1e-9 relative threshold per derivative order. Throws
/// NotAModulatingFunction when neither boundary set vanishes.
MfKind classify(const ModulatingFunction& mf, int k);

/**
 * @brief Receding-horizon store of the last T seconds of (u, y) samples
 *
 * Fixed-capacity ring of N+1 uniformly spaced sample pairs. Reports full()
 * only once t >= T after the first push. Single writer; may be moved across
 * threads but not mutated concurrently.
 */
class SignalWindow {
   public:
    SignalWindow(double horizon, double ts);

    void push(double u, double y);
    bool full() const { return count_ >= static_cast<std::size_t>(capacity()); }
    int capacity() const { return static_cast<int>(u_.size()); }  // N+1
    double ts() const { return ts_; }
    double horizon() const { return horizon_; }
    /// Absolute time of the newest sample (first push is t = 0).
    double newest_time() const;

    /// Ordered copies, oldest to newest. Throw WindowNotReady until full.
    Vector y_samples() const;
    Vector u_samples() const;

   private:
    Vector ordered(const std::vector<double>& ring) const;
    std::vector<double> u_, y_;
    double horizon_, ts_;
    std::size_t count_ = 0;  // total pushes
};

/// L^i[f] = integral over [t-T, t] of (-1)^i phi^(i)(tau - t + T) f(tau),
/// evaluated on the window samples (oldest to newest) by the selected
/// Riemann rule. Requires 0 <= i <= mf.order().
double apply_l(const ModulatingFunction& mf, int i, const Vector& samples, double ts,
               QuadratureScheme scheme = QuadratureScheme::Rectangle);

/// Window-channel overload; throws WindowNotReady until the window is full.
double apply_l(const ModulatingFunction& mf, int i, const SignalWindow& window, bool y_channel,
               QuadratureScheme scheme = QuadratureScheme::Rectangle);

/// Per-sample FIR weights of L^i for a polynomial kernel, integrating the
/// kernel exactly against the held (Zoh) or linearly interpolated (Foh)
/// signal on each sample interval. Weights are independent of the data, so
/// they are precomputed once per kernel and reused every tick.
Vector l_fir_weights(const ModulatingFunction& mf, int i, int sample_count, double ts,
                     SignalHold hold);

/// Quadrature convention of the sample-space kernel machinery. Rectangle is
/// the literal first-order scheme (cumulative sums of ones, left-endpoint
/// signal weighting); Trapezoid upgrades both the anti-derivative chain and
/// the signal weighting to second order while keeping the same matrix
/// structure.
enum class AlphaScheme { Rectangle, Trapezoid };

/// Whether a channel fed to the sample-space machinery is a pointwise sample
/// of a smooth signal (y) or the left value of a zero-order-held one (u).
enum class ChannelKind { Sampled, Held };

/**
 * @brief Sample-space kernel alpha = phi^(n) of one time-varying total MF
 *
 * The kernel lives on the window grid; anti-derivatives are taken by the
 * cumulative matrix Q of the discretization, so the boundary conditions
 * alpha^(-i)(T) = 0, i = 1..n hold in exactly the arithmetic the regression
 * uses.
 */
struct AlphaKernel {
    Vector samples;  // length N+1
    int n = 0;
    double ts = 0.0;
    AlphaScheme scheme = AlphaScheme::Rectangle;
};

/// Discrete L^i value of an alpha kernel on a sample vector:
/// (-1)^i ts^{n-i+1} s^T Q^{n-i} alpha for 0 <= i <= n, with the signal
/// weighting of the kernel's scheme.
double alpha_l_value(const AlphaKernel& kernel, int i, const Vector& samples,
                     ChannelKind kind = ChannelKind::Sampled);

/// Result of the per-window kernel solve: m_t kernels, the reconstructed
/// discrete W (ideally the identity), boundary residuals and diagnostics.
struct AlphaBank {
    std::vector<AlphaKernel> kernels;
    Matrix w;            // m_t x m_t, K * alpha
    Matrix gamma;        // n x m_t boundary residuals
    double w_residual = 0.0;
    double gamma_residual = 0.0;
    int rank = 0;
    double condition = 0.0;
    bool include_d = false;
    AlphaScheme scheme = AlphaScheme::Rectangle;
};

/// Solves for the m_t = n * channels.size() (+1 with include_d) sample-space
/// kernels enforcing W = I and zero boundary conditions, via the minimum-norm
/// solution of the stacked constraint system (rank-revealing orthogonal
/// decomposition, relative rank tolerance 1e-10). Channel order fixes the
/// row order of W; the constant row (include_d) comes first.
/// Throws RankDeficient with the achieved rank on non-exciting windows.
AlphaBank solve_alpha_bank(const std::vector<std::pair<Vector, ChannelKind>>& channels, int n,
                           bool include_d, double ts,
                           AlphaScheme scheme = AlphaScheme::Rectangle);

/// Convenience overload on the (y, u) window.
AlphaBank solve_alpha_bank(const SignalWindow& window, int n, bool include_d,
                           AlphaScheme scheme = AlphaScheme::Rectangle);

/**
 * @brief State-space generator of a reversed modulating function
 *
 * psi(t) = Sigma * exp(Lambda t) * l on [0, T]. Polynomial kernels use the
 * nilpotent shift with Taylor coefficients; exponential kernels use a stable
 * diagonal Lambda.
 */
class MfGenerator {
   public:
    MfGenerator(Matrix lambda, Vector l, RowVector sigma, double horizon);

    /// psi^(i)(s) = Sigma Lambda^i exp(Lambda s) l.
    double eval(int derivative, double s) const;

    const Matrix& lambda() const { return lambda_; }
    const Vector& l() const { return l_; }
    const RowVector& sigma() const { return sigma_; }
    double horizon() const { return horizon_; }
    int dimension() const { return static_cast<int>(lambda_.rows()); }

    /// Integral of psi over [0, T].
    double kernel_mass() const;

   private:
    Matrix lambda_;
    Vector l_;
    RowVector sigma_;
    double horizon_;
};

/// Generator realizing the reversed kernel psi(t) = phi(T - t) of a
/// polynomial modulating function: Lambda is the (p+1)-dimensional nilpotent
/// shift and (Sigma, l) encode psi's Taylor coefficients at 0.
MfGenerator make_mf_generator(const ModulatingFunction& phi);

/// Generator combining exp(-rate * t) terms. With vanish_order v >= 1 the
/// coefficients are solved so that psi and its first v-1 derivatives vanish
/// at both 0 and T (requires rates.size() >= 2 v + 1, distinct rates);
/// vanish_order 0 returns the plain unit combination. The kernel is scaled
/// to peak magnitude 1 with psi(T/2) > 0.
MfGenerator make_mf_generator_exponential(const std::vector<double>& rates, int vanish_order,
                                          double T);

/// Wraps a generator as a ModulatingFunction so classify() applies to it.
ModulatingFunction as_modulating_function(std::shared_ptr<const MfGenerator> gen, int order);

/// How the filter reconstructs its scalar input between ticks.
using InputHold = SignalHold;

namespace detail {
/// Shared stepping/delay/rebase machinery for matrix-valued filter states
/// Xi' = Lambda Xi + l * v(t)^T with windowed read-out
/// Sigma Lambda^i [Xi(t) - exp(Lambda T) Xi(t - T)].
class WindowedFilterCore {
   public:
    WindowedFilterCore(const MfGenerator& gen, double ts, int width, int max_order,
                       InputHold hold);

    void step(const Eigen::RowVectorXd& sample);
    bool ready() const { return delay_.size() == static_cast<std::size_t>(window_len_); }
    /// Row vector Sigma Lambda^i [Xi(t) - E_T Xi(t-T)]; throws WindowNotReady.
    RowVector read(int i) const;
    std::int64_t ticks() const { return ticks_; }

   private:
    void rebase();

    Matrix ad_;        // exp(Lambda ts)
    Vector b_prev2_, b_prev_, b_new_;  // input injection across sample stencil
    Matrix exp_t_;     // exp(Lambda T)
    std::vector<RowVector> sigma_lambda_;
    Matrix state_;     // n_psi x width
    Eigen::RowVectorXd prev_sample_, prev2_sample_;
    bool have_prev_ = false;
    std::deque<Matrix> delay_;
    int window_len_ = 0;  // N + 1
    std::int64_t ticks_ = 0;
    std::int64_t rebase_period_ = 0;
};
}  // namespace detail

/**
 * @brief On-line evaluation of M^i[f] = integral of psi^(i)(t - tau) f(tau)
 *
 * One exact one-step transition of the generator dynamics per sample tick
 * (zero-order-held input by default). Reads are invalid until an entire
 * horizon of samples has been absorbed. The internal delay line is re-based
 * every 10 T to keep marginally stable (nilpotent) generators bounded; the
 * re-basing is output-invariant.
 */
class MFilter {
   public:
    MFilter(const MfGenerator& gen, double ts, int max_order, InputHold hold = InputHold::Zoh);

    void step(double sample);
    bool ready() const { return core_.ready(); }
    double read(int i) const;  // M^i[f]; throws WindowNotReady

   private:
    detail::WindowedFilterCore core_;
};

/**
 * @brief Kronecker-lifted windowed filters for the Gramian stage
 *
 * Maintains M^0[h] for a vector signal h = w z and M^0[G] for the matrix
 * signal G = w w^T, fed one sample per tick.
 */
class GramianFilters {
   public:
    GramianFilters(const MfGenerator& gen, double ts, int m);

    void step(const Vector& h, const Matrix& g);
    bool ready() const { return h_core_.ready(); }
    Vector read_h() const;
    Matrix read_g() const;
    int width() const { return m_; }

   private:
    detail::WindowedFilterCore h_core_;
    detail::WindowedFilterCore g_core_;
    int m_;
};

}  // namespace mfest
