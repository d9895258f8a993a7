#include "mfest/plant.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mfest {

ContinuousLtiSystem rc_system(const RcParams& p) {
    if (!(p.c_m > 0.0) || !(p.c_s > 0.0) || !(p.r_ms > 0.0) || !(p.r_sr > 0.0)) {
        throw std::invalid_argument("RC capacities and resistances must be strictly positive");
    }
    Matrix A(2, 2);
    A << -1.0 / (p.c_m * p.r_ms), 1.0 / (p.c_m * p.r_ms),
         1.0 / (p.c_s * p.r_ms), -(1.0 / (p.c_s * p.r_ms) + 1.0 / (p.c_s * p.r_sr));
    Matrix B(2, 1);
    B << 1.0 / p.c_m, 0.0;
    Matrix C(1, 2);
    C << 1.0, 0.0;
    Vector bd(2);
    bd << 0.0, 1.0 / (p.c_s * p.r_sr);  // room-temperature channel
    return ContinuousLtiSystem(std::move(A), std::move(B), std::move(C), bd);
}

IoCoefficients rc_io_truth(const RcParams& p) {
    return io_form(rc_system(p), p.t_r);
}

RcParams io_to_physical(const IoCoefficients& io) {
    if (io.a.size() != 2 || io.b.size() != 2)
        throw std::invalid_argument("io_to_physical expects a second-order model");
    const double a0 = io.a(0), a1 = io.a(1), b0 = io.b(0), b1 = io.b(1);

    if (!(b1 > 0.0)) throw Unphysical("b1 > 0");
    const double p = a1 - b0 / b1;           // 1/(C_m R_ms)
    if (!(p > 0.0)) throw Unphysical("a1 - b0/b1 > 0");
    if (!(a0 > 0.0)) throw Unphysical("a0 > 0");
    const double q = a0 / p;                 // 1/(C_s R_sr)
    const double r = b0 / b1 - q;            // 1/(C_s R_ms)
    if (!(r > 0.0)) throw Unphysical("b0/b1 - a0/(a1 - b0/b1) > 0");

    RcParams out;
    out.c_m = 1.0 / b1;
    out.r_ms = b1 / p;                       // 1/(C_m p)
    out.c_s = 1.0 / (r * out.r_ms);
    out.r_sr = 1.0 / (q * out.c_s);
    out.t_r = io.d / a0;
    return out;
}

Vector rc_equilibrium(const RcParams& p) {
    Vector x0(2);
    x0 << p.t_r, p.t_r;
    return x0;
}

namespace {

struct Lfsr {
    // Maximal-length Fibonacci LFSR taps (x^w + x^t + 1).
    static int tap_for(int bits) {
        switch (bits) {
            case 7: return 6;
            case 10: return 7;
            case 15: return 14;
            default:
                throw std::invalid_argument("PRBS register width must be 7, 10 or 15");
        }
    }

    Lfsr(int bits, std::uint64_t seed) : width(bits), tap(tap_for(bits)) {
        const std::uint64_t period = (1ull << width) - 1ull;
        state = static_cast<std::uint32_t>(seed % period) + 1u;  // never zero
    }

    // b_m = b_{m-width} xor b_{m-tap}: maximal-length recurrence of
    // x^width + x^tap + 1.
    int step() {
        const std::uint32_t newbit = ((state >> (width - 1)) ^ (state >> (tap - 1))) & 1u;
        state = ((state << 1) | newbit) & ((1u << width) - 1u);
        return static_cast<int>(newbit);
    }

    int width;
    int tap;
    std::uint32_t state;
};

int prbs_bit(const InputProfile& profile, std::int64_t chip) {
    const std::int64_t period = (1ll << profile.prbs_bits) - 1ll;
    std::int64_t k = chip % period;
    if (k < 0) k += period;
    Lfsr reg(profile.prbs_bits, profile.seed);
    int bit = 0;
    for (std::int64_t i = 0; i <= k; ++i) bit = reg.step();
    return bit;
}

// splitmix64, used for portable deterministic noise.
std::uint64_t mix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double uniform01(std::uint64_t& s) {
    return static_cast<double>(mix64(s) >> 11) * 0x1.0p-53;
}

}  // namespace

double eval_input(const InputProfile& profile, double tau) {
    switch (profile.kind) {
        case InputProfile::Kind::Constant:
            return profile.offset + profile.amplitude;
        case InputProfile::Kind::Sine:
            return profile.offset +
                   profile.amplitude * std::sin(2.0 * std::numbers::pi * tau / profile.period);
        case InputProfile::Kind::Pulse: {
            double phase = std::fmod(tau, profile.period);
            if (phase < 0.0) phase += profile.period;
            return profile.offset +
                   (phase < profile.duty * profile.period ? profile.amplitude : 0.0);
        }
        case InputProfile::Kind::Prbs: {
            const auto chip = static_cast<std::int64_t>(std::floor(tau / profile.chip_time));
            return profile.offset + (prbs_bit(profile, chip) ? profile.amplitude : 0.0);
        }
    }
    throw std::logic_error("unreachable input kind");
}

Trajectory simulate(const ContinuousLtiSystem& sys, const InputProfile& profile,
                    const Vector& x0, double ts, double duration, double disturbance_value) {
    if (!(ts > 0.0)) throw std::invalid_argument("simulate: ts must be positive");
    if (!(duration >= ts)) throw std::invalid_argument("simulate: duration must be >= ts");
    if (x0.size() != sys.order()) throw std::invalid_argument("simulate: x0 dimension mismatch");

    const auto steps = static_cast<std::size_t>(std::llround(duration / ts));
    const auto samples = steps + 1;

    Trajectory traj;
    traj.ts = ts;
    traj.t.resize(samples);
    traj.u.resize(samples);
    traj.y.resize(samples);
    traj.x_true.resize(static_cast<Eigen::Index>(samples), sys.order());

    const Matrix& A = sys.A();
    const Vector bu = sys.B().col(0);
    const Vector bd = sys.disturbance_gain()
                          ? Vector(*sys.disturbance_gain() * disturbance_value)
                          : Vector(Vector::Zero(sys.order()));

    Vector x = x0;
    for (std::size_t k = 0; k < samples; ++k) {
        const double tk = static_cast<double>(k) * ts;
        const double uk = eval_input(profile, tk);
        traj.t[k] = tk;
        traj.u[k] = uk;
        traj.y[k] = (sys.C() * x)(0, 0);
        traj.x_true.row(static_cast<Eigen::Index>(k)) = x.transpose();

        if (k + 1 < samples) {
            // Classical RK4 with the input held at u(t_k) across the step.
            const Vector drive = bu * uk + bd;
            const auto f = [&](const Vector& xi) -> Vector { return A * xi + drive; };
            const Vector k1 = f(x);
            const Vector k2 = f(x + 0.5 * ts * k1);
            const Vector k3 = f(x + 0.5 * ts * k2);
            const Vector k4 = f(x + ts * k3);
            x = x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    return traj;
}

Trajectory add_noise(const Trajectory& traj, double amplitude, std::uint64_t seed) {
    if (!(amplitude >= 0.0)) throw std::invalid_argument("noise amplitude must be >= 0");
    Trajectory out = traj;
    out.noise_amplitude = amplitude;
    out.noise_seed = seed;
    if (amplitude == 0.0) return out;
    std::uint64_t s = seed;
    for (auto& v : out.y) v += amplitude * (2.0 * uniform01(s) - 1.0);
    return out;
}

}  // namespace mfest
