#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mfest/lti.hpp"
#include "mfest/modfunc.hpp"

namespace mfest {

/**
 * @brief One on-line parameter estimate
 *
 * theta is ordered [d (optional), -a_0 ... -a_{n-1}, b_0 ... b_{n-1}],
 * matching the regression convention. valid_from is the earliest time the
 * producing method defines an estimate (T for instantaneous methods,
 * T + T' for averaged/Gramian ones).
 */
struct ParameterEstimate {
    Vector theta;
    double valid_from = 0.0;
    std::string method;
    double condition = 0.0;
    bool stale = false;

    IoCoefficients to_io(int n, bool include_d) const;
};

/// theta vector of the regression convention from IO coefficients.
Vector theta_from_io(const IoCoefficients& io, bool include_d);

struct StateEstimate {
    Vector x_hat;
    double timestamp = 0.0;
    std::string method;
};

/// Stacked regression data of one window evaluation: z_j = L^n_j[y] and the
/// m_t regressor columns w_j (rows ordered like theta). When the signals were
/// centered for conditioning, the offsets are recorded so the solved d can be
/// shifted back (d = d_tilde + a0 y_offset - b0 u_offset, exact algebra).
struct RegressionSample {
    Vector z;   // m_t
    Matrix w;   // dim x m_t
    double timestamp = 0.0;
    double y_offset = 0.0;
    double u_offset = 0.0;
};

/// Undo signal centering on a solved theta vector (no-op without d).
void uncenter_theta(Vector& theta, int n, bool include_d, double y_offset, double u_offset);

/// Time-indexed sequence of estimates with validity/staleness flags.
struct EstimateTrace {
    std::vector<double> t;
    std::vector<Vector> values;
    std::vector<std::uint8_t> valid;
    std::vector<std::uint8_t> stale;

    void append(double time, const Vector* value, bool is_valid, bool is_stale);
    std::size_t size() const { return t.size(); }
};

/// Regression rows from a bank of fixed total modulating functions.
RegressionSample regression_row(const std::vector<ModulatingFunction>& bank,
                                const SignalWindow& window, int n, bool include_d,
                                QuadratureScheme scheme = QuadratureScheme::Rectangle);

/// Regression rows from a solved time-varying kernel bank (W = I by
/// construction, so z estimates theta directly).
RegressionSample regression_row(const AlphaBank& bank, const SignalWindow& window, int n);

/// Least-squares solve theta = (W W^T)^{-1} W z. Throws SingularGramian when
/// the normal matrix conditioning exceeds 1e12.
ParameterEstimate estimate_batch(const Matrix& w, const Vector& z);

/// Normalized-RMSE goodness of fit: 100 (1 - |y - y_model| / |y - mean(y)|).
double fit_percent(const std::vector<double>& y_measured, const std::vector<double>& y_model);

/// Ackermann observer gain placing eig(A - L C) at the given (real) poles.
Vector place_observer_gain(const Matrix& A, const Matrix& C, const std::vector<double>& poles);

/**
 * @brief Luenberger observer baseline, exactly discretized
 *
 * Steps xhat' = A xhat + B u + B_d w + L (y - C xhat) with u, y zero-order
 * held over each tick. Construction verifies A - L C is Hurwitz.
 */
class LuenbergerObserver {
   public:
    LuenbergerObserver(const ContinuousLtiSystem& sys, const Vector& gain, double ts,
                       double disturbance_value = 0.0);

    /// Gains from pole placement at `pole_scale` times the plant eigenvalues.
    static LuenbergerObserver with_pole_scale(const ContinuousLtiSystem& sys, double pole_scale,
                                              double ts, double disturbance_value = 0.0);

    void step(double u, double y);
    const Vector& state() const { return x_hat_; }
    void set_state(const Vector& x0);
    const Vector& gain() const { return gain_; }

   private:
    Matrix transition_;  // exp((A - L C) ts)
    Matrix injection_;   // exact ZOH map of [u, y, 1]
    Vector gain_;
    Vector x_hat_;
};

// ---------------------------------------------------------------------------
// Streaming estimators. Each instance is a single-writer state machine fed
// one (u, y) sample per tick; time starts at 0 with the first sample.
// ---------------------------------------------------------------------------

class ParameterEstimatorBase {
   public:
    virtual ~ParameterEstimatorBase() = default;
    virtual void step(double u, double y) = 0;
    virtual std::optional<ParameterEstimate> latest() const = 0;
    virtual std::string method() const = 0;
    virtual int failure_count() const { return 0; }
};

/// Quadrature of the fixed-bank regression: the plain Riemann rules, or the
/// exact per-interval kernel integration against the interpolated signals
/// (y linear, u held).
enum class RegressionQuadrature { Rectangle, Trapezoid, InterpolantExact };

/// Windowed regression over a fixed total-MF bank with the kernel values
/// baked into per-sample weights (they never change between ticks).
class FixedBankRegression {
   public:
    FixedBankRegression(int n, bool include_d, double horizon, double ts,
                        std::vector<ModulatingFunction> bank,
                        RegressionQuadrature scheme = RegressionQuadrature::Rectangle);

    void push(double u, double y);
    bool ready() const { return window_.full(); }
    double newest_time() const { return window_.newest_time(); }
    /// Regression of the current window; with include_d the signals are
    /// centered by the window means (or the explicit offsets) and the offsets
    /// recorded in the sample. Throws WindowNotReady.
    RegressionSample sample() const;
    RegressionSample sample(double y_offset, double u_offset) const;

    int dim() const { return 2 * n_ + (include_d_ ? 1 : 0); }
    int bank_size() const { return static_cast<int>(y_weights_.size()); }

   private:
    int n_;
    bool include_d_;
    SignalWindow window_;
    std::vector<std::vector<Vector>> y_weights_;  // [kernel][order 0..n]
    std::vector<std::vector<Vector>> u_weights_;
    Vector d_entries_;                            // L^0_j[1]
};

/// Instantaneous least squares over a fixed total-MF bank (valid from t = T).
class BatchEstimator : public ParameterEstimatorBase {
   public:
    BatchEstimator(int n, bool include_d, double horizon, double ts,
                   std::vector<ModulatingFunction> bank,
                   RegressionQuadrature scheme = RegressionQuadrature::Rectangle);

    void step(double u, double y) override;
    std::optional<ParameterEstimate> latest() const override { return latest_; }
    std::string method() const override { return "batch"; }
    int failure_count() const override { return failures_; }

    /// Regression of the current window (test/diagnostic hook).
    RegressionSample current_regression() const { return regression_.sample(); }

   private:
    FixedBankRegression regression_;
    double ts_;
    int n_;
    bool include_d_;
    std::optional<ParameterEstimate> latest_;
    int failures_ = 0;
    std::int64_t ticks_ = 0;
};

/// Second receding-horizon stage shared by the Gramian-style estimators:
/// either a uniform sliding integral over T' or psi-kernel windowed filters.
class GramianStage {
   public:
    GramianStage(double t_prime, double ts, int dim);                       // uniform
    GramianStage(const MfGenerator& kernel, double ts, int dim);            // psi kernel

    void push(const Vector& h, const Matrix& g);
    bool ready() const;
    Vector integral_h() const;
    Matrix integral_g() const;

   private:
    void rebuild();
    int dim_;
    double ts_ = 0.0;
    std::size_t capacity_ = 0;  // N' + 1 (uniform mode)
    std::deque<std::pair<Vector, Matrix>> entries_;
    Vector sum_h_;
    Matrix sum_g_;
    std::int64_t pushes_ = 0;
    std::unique_ptr<GramianFilters> filters_;
};

/// Gramian least squares over a fixed-MF regression stream
/// (valid from t = T + T').
class GramianEstimator : public ParameterEstimatorBase {
   public:
    GramianEstimator(int n, bool include_d, double horizon, double t_prime, double ts,
                     std::vector<ModulatingFunction> bank,
                     const MfGenerator* kernel = nullptr,
                     RegressionQuadrature scheme = RegressionQuadrature::Rectangle);

    void step(double u, double y) override;
    std::optional<ParameterEstimate> latest() const override { return latest_; }
    std::string method() const override { return "gramian"; }
    int failure_count() const override { return failures_; }

   private:
    FixedBankRegression regression_;
    GramianStage stage_;
    double ts_;
    bool include_d_;
    int n_;
    bool offsets_frozen_ = false;
    double y_offset_ = 0.0, u_offset_ = 0.0;
    std::optional<ParameterEstimate> latest_;
    int failures_ = 0;
    std::int64_t ticks_ = 0;
};

/// Time-varying modulating functions normalized to W = I, averaged over T'
/// (valid from t = T + T'). The kernel bank is re-solved every `stride`
/// ticks; T' must be a multiple of stride * ts.
class NormalizedEstimator : public ParameterEstimatorBase {
   public:
    NormalizedEstimator(int n, bool include_d, double horizon, double t_prime, double ts,
                        AlphaScheme scheme = AlphaScheme::Rectangle, int stride = 1);

    void step(double u, double y) override;
    std::optional<ParameterEstimate> latest() const override { return latest_; }
    std::string method() const override { return "normalized"; }
    int failure_count() const override { return failures_; }

    double max_w_residual() const { return max_w_residual_; }
    double max_gamma_residual() const { return max_gamma_residual_; }

   private:
    struct Entry {
        Vector z;
        double y_offset, u_offset;
    };
    int n_;
    bool include_d_;
    double ts_, t_prime_;
    AlphaScheme scheme_;
    int stride_;
    SignalWindow window_;
    std::deque<Entry> z_history_;  // capacity N' + 1
    Vector z_sum_;
    double y_offset_sum_ = 0.0, u_offset_sum_ = 0.0;
    std::size_t capacity_;
    std::optional<ParameterEstimate> latest_;
    int failures_ = 0;
    std::int64_t ticks_ = 0, pushes_ = 0;
    double max_w_residual_ = 0.0, max_gamma_residual_ = 0.0;
};

/// Direct continuous-time path: single reversed-MF filters for the
/// regression, psi-kernel (or uniform) Gramian stage, direct inversion
/// (valid from t = T + T').
class DirectCtEstimator : public ParameterEstimatorBase {
   public:
    DirectCtEstimator(int n, bool include_d, const MfGenerator& regression_kernel, double ts,
                      double t_prime, const MfGenerator* gramian_kernel = nullptr,
                      InputHold y_hold = InputHold::Zoh);

    void step(double u, double y) override;
    std::optional<ParameterEstimate> latest() const override { return latest_; }
    std::string method() const override { return "direct-ct"; }
    int failure_count() const override { return failures_; }

   private:
    int n_;
    bool include_d_;
    double ts_;
    double mass_;  // M^0[1] once the window is full
    MFilter y_filter_, u_filter_;
    GramianStage stage_;
    bool offsets_frozen_ = false;
    double y_offset_ = 0.0, u_offset_ = 0.0;
    double u_prev_ = 0.0, u_prev2_ = 0.0;
    std::int64_t u_seen_ = 0;
    std::optional<ParameterEstimate> latest_;
    int failures_ = 0;
    std::int64_t ticks_ = 0;
};

enum class StateMfMode { Left, RightReversed };

/// Finite-time state estimate from one full window given coefficients and
/// the structural matrices of the (estimated or true) plant realization.
StateEstimate estimate_state_mf(const SignalWindow& window, const IoCoefficients& coeffs,
                                const StructuralMatrices& sm,
                                const std::vector<ModulatingFunction>& left_bank,
                                StateMfMode mode = StateMfMode::Left,
                                SignalHold y_hold = SignalHold::Foh);

/**
 * @brief Streaming finite-time state estimator (valid from t = T)
 *
 * Consumes the latest coefficient set via set_coefficients; the boundary
 * weight matrix W_l is factored once per coefficient update and frozen in
 * between. The left mode integrates the window by precomputed exact-kernel
 * FIR weights; the right-reversed mode runs the reversed kernels through
 * windowed state-space filters. Both reconstruct u as held and y as linearly
 * interpolated, so the two routes agree to numerical precision.
 */
class MfStateEstimator {
   public:
    MfStateEstimator(int n, double horizon, double ts, int m_l = 0,
                     StateMfMode mode = StateMfMode::Left, SignalHold y_hold = SignalHold::Foh);

    void set_coefficients(const IoCoefficients& coeffs, const StructuralMatrices& sm);
    bool has_coefficients() const { return have_coeffs_; }

    void step(double u, double y);
    std::optional<StateEstimate> latest() const { return latest_; }
    int failure_count() const { return failures_; }

   private:
    void refactor();

    int n_, m_l_;
    StateMfMode mode_;
    SignalHold y_hold_;
    double ts_, horizon_;
    std::vector<ModulatingFunction> bank_;
    SignalWindow window_;

    // Left mode: FIR weight tables [kernel][derivative order].
    std::vector<std::vector<Vector>> y_weights_, u_weights_;
    Vector l0_of_one_;  // per kernel

    // Right-reversed mode: windowed filters per kernel and channel.
    std::vector<MFilter> y_filters_, u_filters_;

    IoCoefficients coeffs_;
    Matrix o_inv_;
    Matrix w_l_;  // n x m_l
    Eigen::ColPivHouseholderQR<Matrix> w_l_qr_;
    bool have_coeffs_ = false;

    std::optional<StateEstimate> latest_;
    int failures_ = 0;
    std::int64_t ticks_ = 0;
};

/// Boundary-weight matrix W_l of a left-MF bank for coefficient vector a:
/// columns (phi_vec + a^T Gamma)^T. Shared by both state-estimation modes.
Matrix state_weight_matrix(const std::vector<ModulatingFunction>& left_bank, const Vector& a,
                           int n);

}  // namespace mfest
