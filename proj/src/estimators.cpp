#include "mfest/estimators.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <unsupported/Eigen/MatrixFunctions>

namespace mfest {

namespace {

constexpr double kGramianCondLimit = 1e12;

double condition_of(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    return smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
}

// Solves the information system G theta = rhs under Jacobi equilibration so
// the condition test measures excitation rather than the mixed units of the
// regressor components. Throws SingularGramian past the 1e12 ceiling.
std::pair<Vector, double> solve_information_system(const Matrix& gram, const Vector& rhs) {
    const auto dim = gram.rows();
    Vector scale(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        scale(i) = gram(i, i) > 0.0 ? std::sqrt(gram(i, i)) : 1.0;
    const Matrix equed =
        scale.cwiseInverse().asDiagonal() * gram * scale.cwiseInverse().asDiagonal();
    const double cond = condition_of(equed);
    if (!(cond < kGramianCondLimit)) throw SingularGramian(cond);
    const Vector theta_scaled = equed.ldlt().solve(Vector(scale.cwiseInverse().asDiagonal() * rhs));
    return {scale.cwiseInverse().asDiagonal() * theta_scaled, cond};
}

// Per-sample quadrature weights of L^i for a fixed kernel: the windowed
// integral becomes a dot product against the ordered samples.
Vector quadrature_weights(const ModulatingFunction& mf, int i, int count, double ts,
                          QuadratureScheme scheme) {
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    Vector w = Vector::Zero(count);
    for (int k = 0; k < count; ++k) {
        const bool boundary = (k == 0 || k + 1 == count);
        double factor = 1.0;
        if (scheme == QuadratureScheme::Rectangle) {
            if (k + 1 == count) continue;  // left-endpoint rule
        } else if (boundary) {
            factor = 0.5;
        }
        w(k) = sign * ts * factor * mf.eval(i, k * ts);
    }
    return w;
}

}  // namespace

IoCoefficients ParameterEstimate::to_io(int n, bool include_d) const {
    const int off = include_d ? 1 : 0;
    if (theta.size() != 2 * n + off)
        throw std::invalid_argument("ParameterEstimate::to_io: dimension mismatch");
    IoCoefficients io;
    io.a = -theta.segment(off, n);
    io.b = theta.segment(off + n, n);
    io.d = include_d ? theta(0) : 0.0;
    return io;
}

void uncenter_theta(Vector& theta, int n, bool include_d, double y_offset, double u_offset) {
    if (!include_d) return;
    // y -> y - cy, u -> u - cu shifts only the constant: d_tilde = d - a0 cy + b0 cu.
    theta(0) -= theta(1) * y_offset + theta(1 + n) * u_offset;
}

Vector theta_from_io(const IoCoefficients& io, bool include_d) {
    const auto n = io.a.size();
    Vector theta(2 * n + (include_d ? 1 : 0));
    const int off = include_d ? 1 : 0;
    if (include_d) theta(0) = io.d;
    theta.segment(off, n) = -io.a;
    theta.segment(off + n, n) = io.b;
    return theta;
}

void EstimateTrace::append(double time, const Vector* value, bool is_valid, bool is_stale) {
    t.push_back(time);
    values.push_back(value ? *value : Vector());
    valid.push_back(is_valid ? 1 : 0);
    stale.push_back(is_stale ? 1 : 0);
}

RegressionSample regression_row(const std::vector<ModulatingFunction>& bank,
                                const SignalWindow& window, int n, bool include_d,
                                QuadratureScheme scheme) {
    const Vector y = window.y_samples();
    const Vector u = window.u_samples();
    const double ts = window.ts();
    const int m_t = static_cast<int>(bank.size());
    const int dim = 2 * n + (include_d ? 1 : 0);

    RegressionSample s;
    s.z.resize(m_t);
    s.w.resize(dim, m_t);
    s.timestamp = window.newest_time();
    for (int j = 0; j < m_t; ++j) {
        const auto& mf = bank[static_cast<std::size_t>(j)];
        if (mf.order() < n)
            throw std::invalid_argument("regression bank kernels must have order >= n");
        s.z(j) = apply_l(mf, n, y, ts, scheme);
        int row = 0;
        if (include_d) s.w(row++, j) = apply_l(mf, 0, Vector::Ones(y.size()), ts, scheme);
        for (int i = 0; i < n; ++i) s.w(row++, j) = apply_l(mf, i, y, ts, scheme);
        for (int i = 0; i < n; ++i) s.w(row++, j) = apply_l(mf, i, u, ts, scheme);
    }
    return s;
}

RegressionSample regression_row(const AlphaBank& bank, const SignalWindow& window, int n) {
    const Vector y = window.y_samples();
    const int m_t = static_cast<int>(bank.kernels.size());
    RegressionSample s;
    s.z.resize(m_t);
    s.w = bank.w;  // K alpha of the solve, identity to solver precision
    s.timestamp = window.newest_time();
    for (int j = 0; j < m_t; ++j)
        s.z(j) = alpha_l_value(bank.kernels[static_cast<std::size_t>(j)], n, y);
    return s;
}

ParameterEstimate estimate_batch(const Matrix& w, const Vector& z) {
    if (w.cols() != z.size()) throw std::invalid_argument("estimate_batch: W/z mismatch");
    if (w.cols() < w.rows())
        throw std::invalid_argument("estimate_batch: need at least dim(theta) equations");
    ParameterEstimate est;
    auto [theta, cond] = solve_information_system(w * w.transpose(), w * z);
    est.theta = std::move(theta);
    est.method = "batch";
    est.condition = cond;
    return est;
}

double fit_percent(const std::vector<double>& y_measured, const std::vector<double>& y_model) {
    if (y_measured.size() != y_model.size() || y_measured.size() < 2)
        throw std::invalid_argument("fit_percent: need two equal-length sequences");
    double mean = 0.0;
    for (double v : y_measured) mean += v;
    mean /= static_cast<double>(y_measured.size());

    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < y_measured.size(); ++k) {
        num += (y_measured[k] - y_model[k]) * (y_measured[k] - y_model[k]);
        den += (y_measured[k] - mean) * (y_measured[k] - mean);
    }
    if (den == 0.0) throw DegenerateSignal();
    return 100.0 * (1.0 - std::sqrt(num / den));
}

Vector place_observer_gain(const Matrix& A, const Matrix& C, const std::vector<double>& poles) {
    const auto n = A.rows();
    if (static_cast<Eigen::Index>(poles.size()) != n)
        throw std::invalid_argument("place_observer_gain: need one pole per state");

    // Desired monic polynomial evaluated at A: prod (A - p_i I).
    Matrix p = Matrix::Identity(n, n);
    for (double pole : poles) p = p * (A - pole * Matrix::Identity(n, n));

    Matrix O(n, n);
    RowVector row = C.row(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        O.row(i) = row;
        row = row * A;
    }
    Vector e_last = Vector::Zero(n);
    e_last(n - 1) = 1.0;
    return p * O.partialPivLu().solve(e_last);
}

LuenbergerObserver::LuenbergerObserver(const ContinuousLtiSystem& sys, const Vector& gain,
                                       double ts, double disturbance_value)
    : gain_(gain) {
    const auto n = sys.order();
    if (gain.size() != n) throw std::invalid_argument("observer gain dimension mismatch");
    if (!(ts > 0.0)) throw std::invalid_argument("observer ts must be > 0");

    const Matrix a_cl = sys.A() - gain * sys.C();
    Eigen::EigenSolver<Matrix> eig(a_cl);
    const double worst = eig.eigenvalues().real().maxCoeff();
    if (!(worst < 0.0)) throw UnstableObserver(worst);

    // Exact ZOH discretization of xhat' = A_cl xhat + [B, L, B_d w][u; y; 1].
    Matrix drive(n, 3);
    drive.col(0) = sys.B().col(0);
    drive.col(1) = gain;
    drive.col(2) = sys.disturbance_gain() ? Vector(*sys.disturbance_gain() * disturbance_value)
                                          : Vector(Vector::Zero(n));
    Matrix aug = Matrix::Zero(n + 3, n + 3);
    aug.topLeftCorner(n, n) = a_cl;
    aug.block(0, n, n, 3) = drive;
    const Matrix e = (aug * ts).exp();
    transition_ = e.topLeftCorner(n, n);
    injection_ = e.block(0, n, n, 3);
    x_hat_ = Vector::Zero(n);
}

LuenbergerObserver LuenbergerObserver::with_pole_scale(const ContinuousLtiSystem& sys,
                                                       double pole_scale, double ts,
                                                       double disturbance_value) {
    Eigen::EigenSolver<Matrix> eig(sys.A());
    std::vector<double> poles;
    for (Eigen::Index i = 0; i < sys.order(); ++i) {
        const std::complex<double> lambda = eig.eigenvalues()(i);
        if (std::abs(lambda.imag()) > 1e-9 * std::abs(lambda))
            throw std::invalid_argument("with_pole_scale expects real plant eigenvalues");
        poles.push_back(pole_scale * lambda.real());
    }
    return LuenbergerObserver(sys, place_observer_gain(sys.A(), sys.C(), poles), ts,
                              disturbance_value);
}

void LuenbergerObserver::step(double u, double y) {
    Vector in(3);
    in << u, y, 1.0;
    x_hat_ = transition_ * x_hat_ + injection_ * in;
}

void LuenbergerObserver::set_state(const Vector& x0) {
    if (x0.size() != x_hat_.size()) throw std::invalid_argument("observer state dimension");
    x_hat_ = x0;
}

// ---------------------------------------------------------------------------

FixedBankRegression::FixedBankRegression(int n, bool include_d, double horizon, double ts,
                                         std::vector<ModulatingFunction> bank,
                                         RegressionQuadrature scheme)
    : n_(n), include_d_(include_d), window_(horizon, ts) {
    if (n < 1) throw std::invalid_argument("regression order must be >= 1");
    if (bank.empty()) throw std::invalid_argument("regression bank is empty");
    const int count = window_.capacity();
    y_weights_.reserve(bank.size());
    u_weights_.reserve(bank.size());
    d_entries_.resize(static_cast<Eigen::Index>(bank.size()));
    for (std::size_t j = 0; j < bank.size(); ++j) {
        const auto& mf = bank[j];
        if (mf.order() < n)
            throw std::invalid_argument("regression bank kernels must have order >= n");
        std::vector<Vector> wy, wu;
        double l0_of_one = 0.0;
        for (int i = 0; i <= n; ++i) {
            if (scheme == RegressionQuadrature::InterpolantExact) {
                wy.push_back(l_fir_weights(mf, i, count, ts, SignalHold::Foh));
                if (i < n) {
                    // Exact staircase weights plus the weight-space Laplacian
                    // that realizes u - (ts^2/12) u''; this matches the
                    // O(ts^2) bias of the linear y-interpolant so the two
                    // channels perturb the regression identity consistently.
                    Vector w = l_fir_weights(mf, i, count, ts, SignalHold::Zoh);
                    if (i == 0) l0_of_one = w.sum();
                    Vector corrected = w;
                    for (int k = 0; k < count; ++k) {
                        const double left = k > 0 ? w(k - 1) : 0.0;
                        const double right = k + 1 < count ? w(k + 1) : 0.0;
                        corrected(k) -= (left - 2.0 * w(k) + right) / 12.0;
                    }
                    wu.push_back(std::move(corrected));
                }
            } else {
                const auto plain = scheme == RegressionQuadrature::Trapezoid
                                       ? QuadratureScheme::Trapezoid
                                       : QuadratureScheme::Rectangle;
                wy.push_back(quadrature_weights(mf, i, count, ts, plain));
                if (i < n) {
                    wu.push_back(wy.back());
                    if (i == 0) l0_of_one = wu.back().sum();
                }
            }
        }
        d_entries_(static_cast<Eigen::Index>(j)) = l0_of_one;  // L^0_j[1]
        y_weights_.push_back(std::move(wy));
        u_weights_.push_back(std::move(wu));
    }
}

void FixedBankRegression::push(double u, double y) { window_.push(u, y); }

RegressionSample FixedBankRegression::sample() const {
    if (!include_d_) return sample(0.0, 0.0);
    const Vector y = window_.y_samples();
    const Vector u = window_.u_samples();
    return sample(y.mean(), u.mean());
}

RegressionSample FixedBankRegression::sample(double y_offset, double u_offset) const {
    const Vector y = window_.y_samples().array() - y_offset;
    const Vector u = window_.u_samples().array() - u_offset;
    const int m_t = bank_size();

    RegressionSample s;
    s.z.resize(m_t);
    s.w.resize(dim(), m_t);
    s.timestamp = window_.newest_time();
    s.y_offset = y_offset;
    s.u_offset = u_offset;
    for (int j = 0; j < m_t; ++j) {
        const auto& wy = y_weights_[static_cast<std::size_t>(j)];
        const auto& wu = u_weights_[static_cast<std::size_t>(j)];
        s.z(j) = wy[static_cast<std::size_t>(n_)].dot(y);
        int row = 0;
        if (include_d_) s.w(row++, j) = d_entries_(j);
        for (int i = 0; i < n_; ++i) s.w(row++, j) = wy[static_cast<std::size_t>(i)].dot(y);
        for (int i = 0; i < n_; ++i) s.w(row++, j) = wu[static_cast<std::size_t>(i)].dot(u);
    }
    return s;
}

BatchEstimator::BatchEstimator(int n, bool include_d, double horizon, double ts,
                               std::vector<ModulatingFunction> bank, RegressionQuadrature scheme)
    : regression_(n, include_d, horizon, ts, std::move(bank), scheme),
      ts_(ts),
      n_(n),
      include_d_(include_d) {}

void BatchEstimator::step(double u, double y) {
    regression_.push(u, y);
    ++ticks_;
    if (!regression_.ready()) return;
    try {
        const RegressionSample s = regression_.sample();
        ParameterEstimate est = estimate_batch(s.w, s.z);
        uncenter_theta(est.theta, n_, include_d_, s.y_offset, s.u_offset);
        est.valid_from = latest_ ? latest_->valid_from : s.timestamp;
        est.method = method();
        latest_ = std::move(est);
    } catch (const SingularGramian&) {
        ++failures_;
        if (latest_) latest_->stale = true;
    }
}

GramianStage::GramianStage(double t_prime, double ts, int dim) : dim_(dim), ts_(ts) {
    const auto n_prime = static_cast<long long>(std::llround(t_prime / ts));
    if (n_prime < 1 || std::abs(static_cast<double>(n_prime) * ts - t_prime) > 1e-9 * t_prime)
        throw std::invalid_argument("T' must be a positive multiple of ts");
    capacity_ = static_cast<std::size_t>(n_prime) + 1;
    sum_h_ = Vector::Zero(dim);
    sum_g_ = Matrix::Zero(dim, dim);
}

GramianStage::GramianStage(const MfGenerator& kernel, double ts, int dim)
    : dim_(dim), ts_(ts), filters_(std::make_unique<GramianFilters>(kernel, ts, dim)) {}

void GramianStage::push(const Vector& h, const Matrix& g) {
    if (filters_) {
        filters_->step(h, g);
        return;
    }
    // Running sums cover every entry except the newest (left-endpoint rule).
    if (!entries_.empty()) {
        sum_h_ += entries_.back().first;
        sum_g_ += entries_.back().second;
    }
    entries_.emplace_back(h, g);
    if (entries_.size() > capacity_) {
        sum_h_ -= entries_.front().first;
        sum_g_ -= entries_.front().second;
        entries_.pop_front();
    }
    if (++pushes_ % static_cast<std::int64_t>(capacity_) == 0) rebuild();
}

void GramianStage::rebuild() {
    sum_h_.setZero();
    sum_g_.setZero();
    for (std::size_t k = 0; k + 1 < entries_.size(); ++k) {
        sum_h_ += entries_[k].first;
        sum_g_ += entries_[k].second;
    }
}

bool GramianStage::ready() const {
    return filters_ ? filters_->ready() : entries_.size() == capacity_;
}

Vector GramianStage::integral_h() const {
    if (!ready()) throw WindowNotReady();
    return filters_ ? filters_->read_h() : Vector(ts_ * sum_h_);
}

Matrix GramianStage::integral_g() const {
    if (!ready()) throw WindowNotReady();
    return filters_ ? filters_->read_g() : Matrix(ts_ * sum_g_);
}

GramianEstimator::GramianEstimator(int n, bool include_d, double horizon, double t_prime,
                                   double ts, std::vector<ModulatingFunction> bank,
                                   const MfGenerator* kernel, RegressionQuadrature scheme)
    : regression_(n, include_d, horizon, ts, std::move(bank), scheme),
      stage_(kernel ? GramianStage(*kernel, ts, regression_.dim())
                    : GramianStage(t_prime, ts, regression_.dim())),
      ts_(ts),
      include_d_(include_d),
      n_(n) {}

void GramianEstimator::step(double u, double y) {
    regression_.push(u, y);
    ++ticks_;
    if (!regression_.ready()) return;
    if (!offsets_frozen_) {
        // The aggregated stage needs a constant shifted model, so the
        // centering offsets freeze at the first full window.
        const RegressionSample first = regression_.sample();
        y_offset_ = first.y_offset;
        u_offset_ = first.u_offset;
        offsets_frozen_ = true;
    }
    const RegressionSample s = regression_.sample(y_offset_, u_offset_);
    stage_.push(s.w * s.z, s.w * s.w.transpose());
    if (!stage_.ready()) return;
    try {
        auto [theta, cond] = solve_information_system(stage_.integral_g(), stage_.integral_h());
        uncenter_theta(theta, n_, include_d_, y_offset_, u_offset_);
        ParameterEstimate est;
        est.theta = std::move(theta);
        est.valid_from = latest_ ? latest_->valid_from : s.timestamp;
        est.method = method();
        est.condition = cond;
        latest_ = std::move(est);
    } catch (const SingularGramian&) {
        ++failures_;
        if (latest_) latest_->stale = true;
    }
}

NormalizedEstimator::NormalizedEstimator(int n, bool include_d, double horizon, double t_prime,
                                         double ts, AlphaScheme scheme, int stride)
    : n_(n),
      include_d_(include_d),
      ts_(ts),
      t_prime_(t_prime),
      scheme_(scheme),
      stride_(stride),
      window_(horizon, ts) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    const double step_len = ts * stride;
    const auto n_prime = static_cast<long long>(std::llround(t_prime / step_len));
    if (n_prime < 1 || std::abs(static_cast<double>(n_prime) * step_len - t_prime) > 1e-9 * t_prime)
        throw std::invalid_argument("T' must be a positive multiple of stride * ts");
    capacity_ = static_cast<std::size_t>(n_prime) + 1;
    const int m_t = 2 * n + (include_d ? 1 : 0);
    z_sum_ = Vector::Zero(m_t);
}

void NormalizedEstimator::step(double u, double y) {
    window_.push(u, y);
    ++ticks_;
    if (!window_.full()) return;
    // The kernel solve runs on the stride grid, aligned so the first full
    // window is always a solve tick.
    const auto since_full =
        ticks_ - static_cast<std::int64_t>(window_.capacity());
    if (since_full % stride_ != 0) return;

    Entry entry;
    double cond = 0.0;
    try {
        Vector ys = window_.y_samples();
        Vector us = window_.u_samples();
        entry.y_offset = include_d_ ? ys.mean() : 0.0;
        entry.u_offset = include_d_ ? us.mean() : 0.0;
        ys.array() -= entry.y_offset;
        us.array() -= entry.u_offset;

        const AlphaBank bank = solve_alpha_bank(
            {{ys, ChannelKind::Sampled}, {us, ChannelKind::Held}}, n_, include_d_, ts_, scheme_);
        max_w_residual_ = std::max(max_w_residual_, bank.w_residual);
        max_gamma_residual_ = std::max(max_gamma_residual_, bank.gamma_residual);
        cond = bank.condition;

        const int m_t = static_cast<int>(bank.kernels.size());
        entry.z.resize(m_t);
        for (int j = 0; j < m_t; ++j)
            entry.z(j) = alpha_l_value(bank.kernels[static_cast<std::size_t>(j)], n_, ys);
    } catch (const RankDeficient&) {
        ++failures_;
        if (latest_) latest_->stale = true;
        return;
    }

    if (!z_history_.empty()) {
        z_sum_ += z_history_.back().z;
        y_offset_sum_ += z_history_.back().y_offset;
        u_offset_sum_ += z_history_.back().u_offset;
    }
    z_history_.push_back(std::move(entry));
    if (z_history_.size() > capacity_) {
        z_sum_ -= z_history_.front().z;
        y_offset_sum_ -= z_history_.front().y_offset;
        u_offset_sum_ -= z_history_.front().u_offset;
        z_history_.pop_front();
    }
    if (++pushes_ % static_cast<std::int64_t>(capacity_) == 0) {
        z_sum_.setZero();
        y_offset_sum_ = u_offset_sum_ = 0.0;
        for (std::size_t k = 0; k + 1 < z_history_.size(); ++k) {
            z_sum_ += z_history_[k].z;
            y_offset_sum_ += z_history_[k].y_offset;
            u_offset_sum_ += z_history_[k].u_offset;
        }
    }
    if (z_history_.size() < capacity_) return;

    const double weight = (ts_ * stride_) / t_prime_;
    ParameterEstimate est;
    est.theta = weight * z_sum_;
    uncenter_theta(est.theta, n_, include_d_, weight * y_offset_sum_, weight * u_offset_sum_);
    est.valid_from = latest_ ? latest_->valid_from : window_.newest_time();
    est.method = method();
    est.condition = cond;
    latest_ = std::move(est);
}

DirectCtEstimator::DirectCtEstimator(int n, bool include_d, const MfGenerator& regression_kernel,
                                     double ts, double t_prime,
                                     const MfGenerator* gramian_kernel, InputHold y_hold)
    : n_(n),
      include_d_(include_d),
      ts_(ts),
      mass_(regression_kernel.kernel_mass()),
      y_filter_(regression_kernel, ts, n, y_hold),
      u_filter_(regression_kernel, ts, n, InputHold::Zoh),
      stage_(gramian_kernel ? GramianStage(*gramian_kernel, ts, 2 * n + (include_d ? 1 : 0))
                            : GramianStage(t_prime, ts, 2 * n + (include_d ? 1 : 0))) {}

void DirectCtEstimator::step(double u, double y) {
    // Backward second difference realizes u - (ts^2/12) u'' causally; it
    // pairs the held u channel with the interpolation bias of the y channel.
    double u_fed = u;
    if (u_seen_ >= 2) u_fed = u - (u - 2.0 * u_prev_ + u_prev2_) / 12.0;
    u_prev2_ = u_seen_ >= 1 ? u_prev_ : u;
    u_prev_ = u;
    ++u_seen_;

    y_filter_.step(y);
    u_filter_.step(u_fed);
    ++ticks_;
    if (!y_filter_.ready()) return;

    const int dim = 2 * n_ + (include_d_ ? 1 : 0);
    Vector w(dim);
    int row = 0;
    if (include_d_) w(row++) = mass_;  // M^0[1] over a full window
    for (int i = 0; i < n_; ++i) w(row++) = y_filter_.read(i);
    for (int i = 0; i < n_; ++i) w(row++) = u_filter_.read(i);
    const double z = y_filter_.read(n_);

    if (include_d_ && !offsets_frozen_) {
        // Kernel-weighted window means; frozen so the shifted model stays
        // constant across the aggregation stage.
        y_offset_ = w(1) / mass_;
        u_offset_ = w(1 + n_) / mass_;
        offsets_frozen_ = true;
    }
    if (include_d_) {
        // Only the zeroth-order reads carry kernel mass (total kernel).
        w(1) -= y_offset_ * mass_;
        w(1 + n_) -= u_offset_ * mass_;
    }

    stage_.push(w * z, w * w.transpose());
    if (!stage_.ready()) return;
    try {
        auto [theta, cond] = solve_information_system(stage_.integral_g(), stage_.integral_h());
        uncenter_theta(theta, n_, include_d_, y_offset_, u_offset_);
        ParameterEstimate est;
        est.theta = std::move(theta);
        est.valid_from = latest_ ? latest_->valid_from : (static_cast<double>(ticks_ - 1) * ts_);
        est.method = method();
        est.condition = cond;
        latest_ = std::move(est);
    } catch (const SingularGramian&) {
        ++failures_;
        if (latest_) latest_->stale = true;
    }
}

// ---------------------------------------------------------------------------

Matrix state_weight_matrix(const std::vector<ModulatingFunction>& left_bank, const Vector& a,
                           int n) {
    const int m_l = static_cast<int>(left_bank.size());
    Matrix w_l(n, m_l);
    for (int j = 0; j < m_l; ++j) {
        const auto& mf = left_bank[static_cast<std::size_t>(j)];
        const double T = mf.horizon();
        // Boundary derivative values phi^(i)(T), i = 0..n-1.
        Vector boundary(n);
        for (int i = 0; i < n; ++i) boundary(i) = mf.eval(i, T);
        for (int m = 0; m < n; ++m) {
            const int i = n - 1 - m;
            double v = ((i % 2 == 0) ? 1.0 : -1.0) * boundary(i);
            for (int r = m + 1; r < n; ++r) {
                const int k = r - m - 1;
                v += a(r) * ((k % 2 == 0) ? 1.0 : -1.0) * boundary(k);
            }
            w_l(m, j) = v;
        }
    }
    return w_l;
}

namespace {

// z_l entry of one kernel from its windowed integral values
// L[0..n] of y, L[0..n-1] of u and L^0[1].
double state_z_entry(const IoCoefficients& io, const Vector& l_y, const Vector& l_u,
                     double l_one) {
    const auto n = io.a.size();
    double z = -l_y(n) + io.d * l_one;
    for (Eigen::Index i = 0; i < n; ++i) z += io.b(i) * l_u(i) - io.a(i) * l_y(i);
    return z;
}

}  // namespace

StateEstimate estimate_state_mf(const SignalWindow& window, const IoCoefficients& coeffs,
                                const StructuralMatrices& sm,
                                const std::vector<ModulatingFunction>& left_bank,
                                StateMfMode mode, SignalHold y_hold) {
    const int n = static_cast<int>(coeffs.a.size());
    const int m_l = static_cast<int>(left_bank.size());
    if (m_l < n) throw std::invalid_argument("estimate_state_mf: need m_l >= n kernels");

    const Vector y = window.y_samples();
    const Vector u = window.u_samples();
    const int count = window.capacity();
    const double ts = window.ts();

    Vector z_l(m_l);
    for (int j = 0; j < m_l; ++j) {
        const auto& mf = left_bank[static_cast<std::size_t>(j)];
        Vector l_y(n + 1), l_u(n);
        for (int i = 0; i <= n; ++i) l_y(i) = l_fir_weights(mf, i, count, ts, y_hold).dot(y);
        for (int i = 0; i < n; ++i) l_u(i) = l_fir_weights(mf, i, count, ts, SignalHold::Zoh).dot(u);
        const double l_one = l_fir_weights(mf, 0, count, ts, SignalHold::Zoh).sum();
        z_l(j) = state_z_entry(coeffs, l_y, l_u, l_one);
    }

    const Matrix w_l = state_weight_matrix(left_bank, coeffs.a, n);
    Eigen::ColPivHouseholderQR<Matrix> qr(w_l.transpose());
    if (qr.rank() < n) throw SingularWl(condition_of(w_l));

    StateEstimate est;
    est.x_hat = sm.O_inv * qr.solve(z_l);
    est.timestamp = window.newest_time();
    est.method = mode == StateMfMode::Left ? "mf-state-left" : "mf-state-right-reversed";
    return est;
}

MfStateEstimator::MfStateEstimator(int n, double horizon, double ts, int m_l, StateMfMode mode,
                                   SignalHold y_hold)
    : n_(n),
      m_l_(m_l > 0 ? m_l : n),
      mode_(mode),
      y_hold_(y_hold),
      ts_(ts),
      horizon_(horizon),
      window_(horizon, ts) {
    if (n < 1) throw std::invalid_argument("state estimator order must be >= 1");
    if (m_l_ < n) throw std::invalid_argument("state estimator needs m_l >= n kernels");
    for (int j = 1; j <= m_l_; ++j) bank_.push_back(make_poly_left_mf(j, n, horizon));

    if (mode_ == StateMfMode::Left) {
        const int count = window_.capacity();
        l0_of_one_.resize(m_l_);
        for (int j = 0; j < m_l_; ++j) {
            const auto& mf = bank_[static_cast<std::size_t>(j)];
            std::vector<Vector> wy, wu;
            for (int i = 0; i <= n; ++i) wy.push_back(l_fir_weights(mf, i, count, ts, y_hold_));
            for (int i = 0; i < n; ++i)
                wu.push_back(l_fir_weights(mf, i, count, ts, SignalHold::Zoh));
            l0_of_one_(j) = wu[0].sum();
            y_weights_.push_back(std::move(wy));
            u_weights_.push_back(std::move(wu));
        }
    } else {
        // Reversed kernels of the left bank are right MFs; run them as
        // windowed state-space filters.
        for (int j = 0; j < m_l_; ++j) {
            const MfGenerator gen = make_mf_generator(bank_[static_cast<std::size_t>(j)]);
            y_filters_.emplace_back(gen, ts, n, y_hold_);
            u_filters_.emplace_back(gen, ts, n, InputHold::Zoh);
        }
        l0_of_one_.resize(m_l_);
        for (int j = 0; j < m_l_; ++j)
            l0_of_one_(j) = make_mf_generator(bank_[static_cast<std::size_t>(j)]).kernel_mass();
    }
}

void MfStateEstimator::set_coefficients(const IoCoefficients& coeffs,
                                        const StructuralMatrices& sm) {
    if (coeffs.a.size() != n_ || coeffs.b.size() != n_)
        throw std::invalid_argument("coefficient order mismatch");
    coeffs_ = coeffs;
    o_inv_ = sm.O_inv;
    have_coeffs_ = true;
    refactor();
}

void MfStateEstimator::refactor() {
    w_l_ = state_weight_matrix(bank_, coeffs_.a, n_);
    w_l_qr_.compute(w_l_.transpose());
    if (w_l_qr_.rank() < n_) {
        have_coeffs_ = false;
        throw SingularWl(condition_of(w_l_));
    }
}

void MfStateEstimator::step(double u, double y) {
    window_.push(u, y);
    if (mode_ == StateMfMode::RightReversed) {
        for (auto& f : y_filters_) f.step(y);
        for (auto& f : u_filters_) f.step(u);
    }
    ++ticks_;
    if (!window_.full() || !have_coeffs_) return;

    Vector z_l(m_l_);
    if (mode_ == StateMfMode::Left) {
        const Vector ys = window_.y_samples();
        const Vector us = window_.u_samples();
        for (int j = 0; j < m_l_; ++j) {
            Vector l_y(n_ + 1), l_u(n_);
            for (int i = 0; i <= n_; ++i)
                l_y(i) = y_weights_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)].dot(ys);
            for (int i = 0; i < n_; ++i)
                l_u(i) = u_weights_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)].dot(us);
            z_l(j) = state_z_entry(coeffs_, l_y, l_u, l0_of_one_(j));
        }
    } else {
        for (int j = 0; j < m_l_; ++j) {
            Vector l_y(n_ + 1), l_u(n_);
            for (int i = 0; i <= n_; ++i)
                l_y(i) = y_filters_[static_cast<std::size_t>(j)].read(i);
            for (int i = 0; i < n_; ++i) l_u(i) = u_filters_[static_cast<std::size_t>(j)].read(i);
            z_l(j) = state_z_entry(coeffs_, l_y, l_u, l0_of_one_(j));
        }
    }

    StateEstimate est;
    est.x_hat = o_inv_ * w_l_qr_.solve(z_l);
    est.timestamp = window_.newest_time();
    est.method = mode_ == StateMfMode::Left ? "mf-state-left" : "mf-state-right-reversed";
    latest_ = std::move(est);
}

}  // namespace mfest
