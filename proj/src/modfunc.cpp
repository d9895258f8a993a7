#include "mfest/modfunc.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

namespace mfest {

namespace {

// Coefficients of the i-th derivative (with respect to t) of a polynomial
// given in the normalized basis x = t/T. Each differentiation divides by T.
Vector derivative_coeffs(const Vector& c, int i, double T) {
    Vector d = c;
    for (int pass = 0; pass < i; ++pass) {
        if (d.size() <= 1) return Vector::Zero(1);
        Vector next(d.size() - 1);
        for (Eigen::Index j = 1; j < d.size(); ++j)
            next(j - 1) = d(j) * static_cast<double>(j) / T;
        d = std::move(next);
    }
    return d;
}

// Coefficients of the antiderivative vanishing at t = 0 (same x basis).
Vector antiderivative_coeffs(const Vector& c, double T) {
    Vector a = Vector::Zero(c.size() + 1);
    for (Eigen::Index j = 0; j < c.size(); ++j)
        a(j + 1) = c(j) * T / static_cast<double>(j + 1);
    return a;
}

double eval_x_poly(const Vector& c, double x) {
    double acc = 0.0;
    for (Eigen::Index j = c.size() - 1; j >= 0; --j) acc = acc * x + c(j);
    return acc;
}

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return r;
}

}  // namespace

ModulatingFunction ModulatingFunction::from_x_polynomial(Vector x_coeffs, double horizon,
                                                         int order) {
    if (!(horizon > 0.0)) throw std::invalid_argument("modulating function horizon must be > 0");
    if (order < 1) throw std::invalid_argument("modulating function order must be >= 1");
    ModulatingFunction mf;
    mf.x_coeffs_ = std::move(x_coeffs);
    mf.horizon_ = horizon;
    mf.order_ = order;
    return mf;
}

ModulatingFunction ModulatingFunction::from_generator(std::shared_ptr<const MfGenerator> gen,
                                                      int order) {
    if (!gen) throw std::invalid_argument("null generator");
    ModulatingFunction mf;
    mf.horizon_ = gen->horizon();
    mf.generator_ = std::move(gen);
    mf.order_ = order;
    return mf;
}

double ModulatingFunction::eval(int derivative, double t) const {
    if (derivative < 0) throw std::invalid_argument("derivative order must be >= 0");
    if (generator_) return generator_->eval(derivative, t);
    return eval_x_poly(derivative_coeffs(x_coeffs_, derivative, horizon_), t / horizon_);
}

ModulatingFunction make_poly_total_mf(int k, double T) {
    if (k < 1) throw std::invalid_argument("total MF order k must be >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("horizon must be > 0");
    // t^k (t-T)^k = T^{2k} x^k (x-1)^k.
    Vector c = Vector::Zero(2 * k + 1);
    const double scale = std::pow(T, 2 * k);
    for (int m = 0; m <= k; ++m)
        c(k + m) = scale * binomial(k, m) * ((k - m) % 2 == 0 ? 1.0 : -1.0);
    return ModulatingFunction::from_x_polynomial(std::move(c), T, k);
}

ModulatingFunction make_normalized_total_mf(int k, double T) {
    if (k < 1) throw std::invalid_argument("total MF order k must be >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("horizon must be > 0");
    // (4 x (1-x))^k, peak value 1 at x = 1/2.
    Vector c = Vector::Zero(2 * k + 1);
    const double scale = std::pow(4.0, k);
    for (int m = 0; m <= k; ++m) c(k + m) = scale * binomial(k, m) * (m % 2 == 0 ? 1.0 : -1.0);
    return ModulatingFunction::from_x_polynomial(std::move(c), T, k);
}

ModulatingFunction make_normalized_total_mf(int a, int b, double T) {
    if (a < 1 || b < 1) throw std::invalid_argument("total MF exponents must be >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("horizon must be > 0");
    Vector c = Vector::Zero(a + b + 1);
    for (int m = 0; m <= b; ++m)
        c(a + m) = binomial(b, m) * (m % 2 == 0 ? 1.0 : -1.0);
    const double xs = static_cast<double>(a) / static_cast<double>(a + b);
    const double peak = std::pow(xs, a) * std::pow(1.0 - xs, b);
    return ModulatingFunction::from_x_polynomial(Vector(c / peak), T, std::min(a, b));
}

std::vector<ModulatingFunction> make_total_mf_bank(int n, int count, double T) {
    if (count < 1) throw std::invalid_argument("bank needs at least one kernel");
    const int base = n + 1;
    std::vector<ModulatingFunction> bank;
    bank.push_back(make_normalized_total_mf(base, base, T));
    for (int j = 1; static_cast<int>(bank.size()) < count; ++j) {
        bank.push_back(make_normalized_total_mf(base, base + 3 * j, T));
        if (static_cast<int>(bank.size()) < count)
            bank.push_back(make_normalized_total_mf(base + 3 * j, base, T));
    }
    return bank;
}

ModulatingFunction make_poly_left_mf(int j, int n, double T) {
    if (j < 1 || n < 1) throw std::invalid_argument("left MF indices must satisfy j, n >= 1");
    Vector c = Vector::Zero(n + j);
    c(n + j - 1) = 1.0;
    return ModulatingFunction::from_x_polynomial(std::move(c), T, n);
}

MfKind classify(const ModulatingFunction& mf, int k) {
    if (k < 1) throw std::invalid_argument("classification order must be >= 1");
    const double T = mf.horizon();
    constexpr int kGrid = 512;

    bool zero_at_start = true;
    bool zero_at_end = true;
    for (int i = 0; i < k; ++i) {
        double peak = 0.0;
        for (int g = 0; g <= kGrid; ++g)
            peak = std::max(peak, std::abs(mf.eval(i, T * g / kGrid)));
        const double tol = 1e-9 * std::max(peak, 1e-300);
        if (std::abs(mf.eval(i, 0.0)) > tol) zero_at_start = false;
        if (std::abs(mf.eval(i, T)) > tol) zero_at_end = false;
    }
    if (zero_at_start && zero_at_end) return MfKind::Total;
    if (zero_at_start) return MfKind::Left;
    if (zero_at_end) return MfKind::Right;
    throw NotAModulatingFunction();
}

SignalWindow::SignalWindow(double horizon, double ts) : horizon_(horizon), ts_(ts) {
    if (!(ts > 0.0)) throw std::invalid_argument("window ts must be > 0");
    const auto n = static_cast<long long>(std::llround(horizon / ts));
    if (n < 1 || std::abs(static_cast<double>(n) * ts - horizon) > 1e-9 * horizon)
        throw std::invalid_argument("window horizon must be a positive multiple of ts");
    u_.assign(static_cast<std::size_t>(n) + 1, 0.0);
    y_.assign(static_cast<std::size_t>(n) + 1, 0.0);
}

void SignalWindow::push(double u, double y) {
    const std::size_t slot = count_ % u_.size();
    u_[slot] = u;
    y_[slot] = y;
    ++count_;
}

double SignalWindow::newest_time() const {
    if (count_ == 0) throw WindowNotReady();
    return static_cast<double>(count_ - 1) * ts_;
}

Vector SignalWindow::ordered(const std::vector<double>& ring) const {
    if (!full()) throw WindowNotReady();
    const std::size_t cap = ring.size();
    Vector out(static_cast<Eigen::Index>(cap));
    const std::size_t newest = (count_ - 1) % cap;
    for (std::size_t k = 0; k < cap; ++k)
        out(static_cast<Eigen::Index>(k)) = ring[(newest + 1 + k) % cap];
    return out;
}

Vector SignalWindow::y_samples() const { return ordered(y_); }
Vector SignalWindow::u_samples() const { return ordered(u_); }

double apply_l(const ModulatingFunction& mf, int i, const Vector& samples, double ts,
               QuadratureScheme scheme) {
    if (i < 0 || i > mf.order()) throw std::invalid_argument("apply_l: need 0 <= i <= order k");
    const auto n_samples = samples.size();
    if (n_samples < 2) throw std::invalid_argument("apply_l: need at least two samples");
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;

    double acc = 0.0;
    if (scheme == QuadratureScheme::Rectangle) {
        for (Eigen::Index k = 0; k + 1 < n_samples; ++k)
            acc += mf.eval(i, static_cast<double>(k) * ts) * samples(k);
    } else {
        for (Eigen::Index k = 0; k < n_samples; ++k) {
            const double w = (k == 0 || k + 1 == n_samples) ? 0.5 : 1.0;
            acc += w * mf.eval(i, static_cast<double>(k) * ts) * samples(k);
        }
    }
    return sign * ts * acc;
}

double apply_l(const ModulatingFunction& mf, int i, const SignalWindow& window, bool y_channel,
               QuadratureScheme scheme) {
    return apply_l(mf, i, y_channel ? window.y_samples() : window.u_samples(), window.ts(),
                   scheme);
}

Vector l_fir_weights(const ModulatingFunction& mf, int i, int sample_count, double ts,
                     SignalHold hold) {
    if (!mf.is_polynomial())
        throw std::invalid_argument("l_fir_weights requires a polynomial kernel");
    if (sample_count < 2) throw std::invalid_argument("l_fir_weights: need >= 2 samples");
    const double T = mf.horizon();
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;

    // g = (-1)^i phi^(i); exact per-interval moments from antiderivatives of
    // g and of s*g.
    Vector g = derivative_coeffs(mf.x_coeffs(), i, T) * sign;
    Vector sg(g.size() + 1);
    sg(0) = 0.0;
    for (Eigen::Index j = 0; j < g.size(); ++j) sg(j + 1) = g(j) * T;  // s * g(s)
    const Vector G = antiderivative_coeffs(g, T);
    const Vector SG = antiderivative_coeffs(sg, T);

    Vector w = Vector::Zero(sample_count);
    for (int k = 0; k + 1 < sample_count; ++k) {
        const double x0 = k * ts / T;
        const double x1 = (k + 1) * ts / T;
        const double a = eval_x_poly(G, x1) - eval_x_poly(G, x0);
        if (hold == SignalHold::Zoh) {
            w(k) += a;
        } else {
            const double first_moment =
                (eval_x_poly(SG, x1) - eval_x_poly(SG, x0) - (k * ts) * a) / ts;
            w(k) += a - first_moment;
            w(k + 1) += first_moment;
        }
    }
    return w;
}

namespace {

// r_k = sum_{l >= k} s_l : the transpose action of the cumulative-sum matrix.
void reverse_cumsum_inplace(Vector& s) {
    for (Eigen::Index k = s.size() - 2; k >= 0; --k) s(k) += s(k + 1);
}

// Transpose action of the cumulative-trapezoid matrix
// (Q_t f)(k) = sum_{l<=k} f_l - (f_0 + f_k)/2.
void reverse_cumtrapz_inplace(Vector& s) {
    const double total = s.sum();
    Vector r = s;
    reverse_cumsum_inplace(r);
    r -= 0.5 * s;
    r(0) -= 0.5 * total;
    s = std::move(r);
}

void cumulate(Vector& s, AlphaScheme scheme) {
    if (scheme == AlphaScheme::Rectangle) reverse_cumsum_inplace(s);
    else reverse_cumtrapz_inplace(s);
}

// Outer-quadrature weighting of a signal against the kernel chain. Sampled
// channels get trapezoid end-weights; held channels get the per-interval
// average that integrates the staircase against the kernel to second order.
Vector channel_weights(const Vector& s, ChannelKind kind, AlphaScheme scheme) {
    if (scheme == AlphaScheme::Rectangle) return s;  // literal all-sample rule
    const auto len = s.size();
    Vector c(len);
    if (kind == ChannelKind::Sampled) {
        c = s;
        c(0) *= 0.5;
        c(len - 1) *= 0.5;
    } else {
        c(0) = 0.5 * s(0);
        for (Eigen::Index k = 1; k + 1 < len; ++k) c(k) = 0.5 * (s(k - 1) + s(k));
        c(len - 1) = 0.5 * s(len - 2);
    }
    return c;
}

}  // namespace

double alpha_l_value(const AlphaKernel& kernel, int i, const Vector& samples, ChannelKind kind) {
    if (i < 0 || i > kernel.n) throw std::invalid_argument("alpha_l_value: need 0 <= i <= n");
    if (samples.size() != kernel.samples.size())
        throw std::invalid_argument("alpha_l_value: sample-count mismatch");
    Vector r = channel_weights(samples, kind, kernel.scheme);
    for (int pass = 0; pass < kernel.n - i; ++pass) cumulate(r, kernel.scheme);
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    return sign * std::pow(kernel.ts, kernel.n - i + 1) * r.dot(kernel.samples);
}

AlphaBank solve_alpha_bank(const std::vector<std::pair<Vector, ChannelKind>>& channels, int n,
                           bool include_d, double ts, AlphaScheme scheme) {
    if (n < 1) throw std::invalid_argument("solve_alpha_bank: n must be >= 1");
    if (channels.empty()) throw std::invalid_argument("solve_alpha_bank: no signal channels");
    const Eigen::Index len = channels.front().first.size();
    for (const auto& c : channels)
        if (c.first.size() != len) throw std::invalid_argument("solve_alpha_bank: ragged channels");

    const int m_t = n * static_cast<int>(channels.size()) + (include_d ? 1 : 0);
    const int rows = m_t + n;
    if (len < rows)
        throw std::invalid_argument("solve_alpha_bank: window too short for the constraint set");

    Matrix K(m_t, len);
    int row = 0;
    const auto fill_channel_rows = [&](const Vector& s, ChannelKind kind) {
        Vector r = channel_weights(s, kind, scheme);
        // r after (n - i) cumulations serves row i; build from i = n-1 down.
        std::vector<Vector> stages(static_cast<std::size_t>(n));
        for (int pass = n - 1; pass >= 0; --pass) {
            cumulate(r, scheme);
            stages[static_cast<std::size_t>(pass)] = r;  // pass == i uses n-i cumulations
        }
        for (int i = 0; i < n; ++i) {
            const double sign = (i % 2 == 0) ? 1.0 : -1.0;
            K.row(row++) = sign * std::pow(ts, n - i + 1) * stages[static_cast<std::size_t>(i)];
        }
    };

    if (include_d) {
        Vector ones = channel_weights(Vector::Ones(len), ChannelKind::Held, scheme);
        for (int pass = 0; pass < n; ++pass) cumulate(ones, scheme);
        K.row(row++) = std::pow(ts, n + 1) * ones;
    }
    for (const auto& c : channels) fill_channel_rows(c.first, c.second);

    Matrix B(n, len);
    {
        // Boundary rows ts^i e_N^T Q^i, listed from i = n down to 1 (for the
        // rectangle scheme e_N^T Q = 1^T, the literal ones rows).
        Vector e_last = Vector::Zero(len);
        e_last(len - 1) = 1.0;
        for (int i = n; i >= 1; --i) {
            Vector r = e_last;
            for (int pass = 0; pass < i; ++pass) cumulate(r, scheme);
            B.row(n - i) = std::pow(ts, i) * r;
        }
    }

    Matrix M(rows, len);
    M.topRows(m_t) = K;
    M.bottomRows(n) = B;

    Matrix rhs = Matrix::Zero(rows, m_t);
    rhs.topLeftCorner(m_t, m_t).setIdentity();

    // Row equilibration: rescales constraints without moving the solution set,
    // so the minimum-norm point is unchanged.
    Vector row_scale(rows);
    for (int r = 0; r < rows; ++r) {
        const double nr = M.row(r).norm();
        row_scale(r) = nr > 0.0 ? nr : 1.0;
    }
    const Matrix Ms = row_scale.cwiseInverse().asDiagonal() * M;
    const Matrix rhs_scaled = row_scale.cwiseInverse().asDiagonal() * rhs;

    Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
    cod.setThreshold(1e-10);
    cod.compute(Ms);
    const int rank = static_cast<int>(cod.rank());
    if (rank < rows) throw RankDeficient(rank, rows);

    const Matrix X = cod.solve(rhs_scaled);

    AlphaBank bank;
    bank.include_d = include_d;
    bank.scheme = scheme;
    bank.kernels.reserve(static_cast<std::size_t>(m_t));
    for (int j = 0; j < m_t; ++j)
        bank.kernels.push_back(AlphaKernel{X.col(j), n, ts, scheme});
    bank.w = K * X;
    bank.gamma = B * X;
    bank.w_residual = (bank.w - Matrix::Identity(m_t, m_t)).cwiseAbs().maxCoeff();
    bank.gamma_residual = bank.gamma.cwiseAbs().maxCoeff();
    bank.rank = rank;
    {
        Eigen::JacobiSVD<Matrix> svd(Ms * Ms.transpose());
        const auto& sv = svd.singularValues();
        bank.condition = std::sqrt(sv(0) / std::max(sv(sv.size() - 1), 1e-300));
    }
    return bank;
}

AlphaBank solve_alpha_bank(const SignalWindow& window, int n, bool include_d,
                           AlphaScheme scheme) {
    return solve_alpha_bank({{window.y_samples(), ChannelKind::Sampled},
                             {window.u_samples(), ChannelKind::Held}},
                            n, include_d, window.ts(), scheme);
}

MfGenerator::MfGenerator(Matrix lambda, Vector l, RowVector sigma, double horizon)
    : lambda_(std::move(lambda)), l_(std::move(l)), sigma_(std::move(sigma)), horizon_(horizon) {
    const auto d = lambda_.rows();
    if (lambda_.cols() != d || l_.size() != d || sigma_.size() != d)
        throw std::invalid_argument("MfGenerator: inconsistent dimensions");
    if (!(horizon_ > 0.0)) throw std::invalid_argument("MfGenerator: horizon must be > 0");
}

double MfGenerator::eval(int derivative, double s) const {
    if (derivative < 0) throw std::invalid_argument("derivative order must be >= 0");
    RowVector r = sigma_;
    for (int i = 0; i < derivative; ++i) r = r * lambda_;
    const Matrix e = (lambda_ * s).exp();
    return (r * e * l_)(0, 0);
}

double MfGenerator::kernel_mass() const {
    const auto d = dimension();
    Matrix aug = Matrix::Zero(d + 1, d + 1);
    aug.topLeftCorner(d, d) = lambda_;
    aug.topRightCorner(d, 1) = l_;
    const Matrix e = (aug * horizon_).exp();
    return (sigma_ * e.topRightCorner(d, 1))(0, 0);
}

MfGenerator make_mf_generator(const ModulatingFunction& phi) {
    if (!phi.is_polynomial())
        throw std::invalid_argument("make_mf_generator expects a polynomial kernel");
    const double T = phi.horizon();

    int degree = 0;
    for (Eigen::Index j = 0; j < phi.x_coeffs().size(); ++j)
        if (phi.x_coeffs()(j) != 0.0) degree = static_cast<int>(j);

    // psi(s) = phi(T - s): Taylor coefficients psi^(j)(0) = (-1)^j phi^(j)(T).
    const int dim = degree + 1;
    Vector l(dim);
    for (int j = 0; j < dim; ++j) l(j) = (j % 2 == 0 ? 1.0 : -1.0) * phi.eval(j, T);

    Matrix lambda = Matrix::Zero(dim, dim);
    for (int i = 0; i + 1 < dim; ++i) lambda(i, i + 1) = 1.0;
    RowVector sigma = RowVector::Zero(dim);
    sigma(0) = 1.0;
    return MfGenerator(std::move(lambda), std::move(l), std::move(sigma), T);
}

MfGenerator make_mf_generator_exponential(const std::vector<double>& rates, int vanish_order,
                                          double T) {
    const int m = static_cast<int>(rates.size());
    if (m < 1) throw std::invalid_argument("exponential generator needs at least one rate");
    for (int i = 0; i < m; ++i) {
        if (!(rates[i] > 0.0)) throw std::invalid_argument("exponential rates must be > 0");
        for (int j = i + 1; j < m; ++j)
            if (rates[i] == rates[j])
                throw std::invalid_argument("exponential rates must be distinct");
    }
    if (vanish_order < 0) throw std::invalid_argument("vanish_order must be >= 0");
    if (vanish_order > 0 && m < 2 * vanish_order + 1)
        throw std::invalid_argument("need at least 2*vanish_order + 1 rates");

    Vector c;
    if (vanish_order == 0) {
        c = Vector::Ones(m);
    } else {
        Matrix cons(2 * vanish_order, m);
        for (int j = 0; j < vanish_order; ++j) {
            for (int i = 0; i < m; ++i) {
                const double p = std::pow(-rates[static_cast<std::size_t>(i)], j);
                cons(j, i) = p;
                cons(vanish_order + j, i) = p * std::exp(-rates[static_cast<std::size_t>(i)] * T);
            }
        }
        Eigen::JacobiSVD<Matrix> svd(cons, Eigen::ComputeFullV);
        c = svd.matrixV().col(m - 1);
    }

    Matrix lambda = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i) lambda(i, i) = -rates[static_cast<std::size_t>(i)];
    RowVector sigma = RowVector::Ones(m);

    // Scale to peak magnitude 1 with a positive mid-horizon value.
    MfGenerator raw(lambda, c, sigma, T);
    double peak = 0.0;
    for (int g = 0; g <= 200; ++g) peak = std::max(peak, std::abs(raw.eval(0, T * g / 200.0)));
    double scale = peak > 0.0 ? 1.0 / peak : 1.0;
    if (raw.eval(0, 0.5 * T) < 0.0) scale = -scale;
    return MfGenerator(std::move(lambda), Vector(c * scale), std::move(sigma), T);
}

ModulatingFunction as_modulating_function(std::shared_ptr<const MfGenerator> gen, int order) {
    return ModulatingFunction::from_generator(std::move(gen), order);
}

namespace detail {

WindowedFilterCore::WindowedFilterCore(const MfGenerator& gen, double ts, int width,
                                       int max_order, InputHold hold) {
    if (!(ts > 0.0)) throw std::invalid_argument("filter ts must be > 0");
    if (width < 1) throw std::invalid_argument("filter width must be >= 1");
    const auto n_len = static_cast<long long>(std::llround(gen.horizon() / ts));
    if (n_len < 1 || std::abs(static_cast<double>(n_len) * ts - gen.horizon()) > 1e-9 * gen.horizon())
        throw std::invalid_argument("filter horizon must be a positive multiple of ts");
    window_len_ = static_cast<int>(n_len) + 1;
    rebase_period_ = 10ll * n_len;

    const auto d = gen.dimension();
    ad_ = (gen.lambda() * ts).exp();
    exp_t_ = (gen.lambda() * gen.horizon()).exp();

    // Van Loan blocks: moments G_k = (k!/ts^k) int exp(Lambda (ts - s)) l s^k/k! ds
    // give the exact injection for held, linear or quadratic reconstruction.
    Matrix aug = Matrix::Zero(d + 3, d + 3);
    aug.topLeftCorner(d, d) = gen.lambda();
    aug.block(0, d, d, 1) = gen.l();
    aug(d, d + 1) = 1.0;
    aug(d + 1, d + 2) = 1.0;
    const Matrix e = (aug * ts).exp();
    const Vector g1 = e.block(0, d, d, 1);
    const Vector g2 = e.block(0, d + 1, d, 1) / ts;            // first moment
    const Vector g3 = e.block(0, d + 2, d, 1) * 2.0 / (ts * ts);  // second moment
    b_prev2_ = Vector::Zero(d);
    switch (hold) {
        case InputHold::Zoh:
            b_prev_ = g1;
            b_new_ = Vector::Zero(d);
            break;
        case InputHold::Foh:
            b_prev_ = g1 - g2;
            b_new_ = g2;
            break;
        case InputHold::Qoh:
            // Causal quadratic through f_{k-2}, f_{k-1}, f_k on [0, ts].
            b_prev2_ = 0.5 * (g3 - g2);
            b_prev_ = g1 - g3;
            b_new_ = 0.5 * (g2 + g3);
            break;
    }

    sigma_lambda_.reserve(static_cast<std::size_t>(max_order) + 1);
    RowVector r = gen.sigma();
    for (int i = 0; i <= max_order; ++i) {
        sigma_lambda_.push_back(r);
        r = r * gen.lambda();
    }

    state_ = Matrix::Zero(d, width);
    prev_sample_ = Eigen::RowVectorXd::Zero(width);
    prev2_sample_ = Eigen::RowVectorXd::Zero(width);
}

void WindowedFilterCore::step(const Eigen::RowVectorXd& sample) {
    if (sample.size() != state_.cols())
        throw std::invalid_argument("filter sample width mismatch");
    if (have_prev_) {
        state_ = ad_ * state_ + b_prev2_ * prev2_sample_ + b_prev_ * prev_sample_ +
                 b_new_ * sample;
    } else {
        prev_sample_ = sample;  // degrade the first quadratic interval
    }
    prev2_sample_ = prev_sample_;
    prev_sample_ = sample;
    have_prev_ = true;
    delay_.push_back(state_);
    if (delay_.size() > static_cast<std::size_t>(window_len_)) delay_.pop_front();
    ++ticks_;
    if (rebase_period_ > 0 && ticks_ % rebase_period_ == 0 && ready()) rebase();
}

RowVector WindowedFilterCore::read(int i) const {
    if (!ready()) throw WindowNotReady();
    if (i < 0 || i >= static_cast<int>(sigma_lambda_.size()))
        throw std::invalid_argument("filter read order out of range");
    return sigma_lambda_[static_cast<std::size_t>(i)] * (state_ - exp_t_ * delay_.front());
}

void WindowedFilterCore::rebase() {
    // Shift every stored state by the propagated offset exp(Lambda k ts) c,
    // c = oldest stored state. The windowed read-out is invariant under this
    // shift while the raw magnitudes drop back to window scale.
    Matrix off = delay_.front();
    for (auto& xi : delay_) {
        xi -= off;
        off = ad_ * off;
    }
    state_ = delay_.back();
}

}  // namespace detail

MFilter::MFilter(const MfGenerator& gen, double ts, int max_order, InputHold hold)
    : core_(gen, ts, 1, max_order, hold) {}

void MFilter::step(double sample) {
    Eigen::RowVectorXd s(1);
    s(0) = sample;
    core_.step(s);
}

double MFilter::read(int i) const { return core_.read(i)(0); }

GramianFilters::GramianFilters(const MfGenerator& gen, double ts, int m)
    : h_core_(gen, ts, m, 0, InputHold::Zoh),
      g_core_(gen, ts, m * m, 0, InputHold::Zoh),
      m_(m) {}

void GramianFilters::step(const Vector& h, const Matrix& g) {
    if (h.size() != m_ || g.rows() != m_ || g.cols() != m_)
        throw std::invalid_argument("gramian filter dimension mismatch");
    h_core_.step(h.transpose());
    g_core_.step(Eigen::Map<const Eigen::RowVectorXd>(g.data(), m_ * m_));
}

Vector GramianFilters::read_h() const { return h_core_.read(0).transpose(); }

Matrix GramianFilters::read_g() const {
    const RowVector flat = g_core_.read(0);
    return Eigen::Map<const Matrix>(flat.data(), m_, m_);
}

}  // namespace mfest
