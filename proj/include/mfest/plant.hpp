#pragma once

#include <cstdint>
#include <vector>

#include "mfest/lti.hpp"

namespace mfest {

/**
 * @brief Physical parameters of the two-node RC heat-flow plant
 *
 * Node 1 is the air/sensor inside the unit (capacity C_m), node 2 the
 * envelope (capacity C_s). R_ms couples the nodes, R_sr couples the envelope
 * to the room at constant temperature T_r.
 */
struct RcParams {
    double c_m = 10.0;   // J/degC
    double c_s = 50.0;   // J/degC
    double r_ms = 2.0;   // degC/W
    double r_sr = 5.0;   // degC/W
    double t_r = 20.0;   // degC
};

/// State-space model of the RC network: x = [T_m, T_e], u = Q_h, y = T_m.
/// The room-temperature channel becomes the constant-disturbance gain.
/// Throws std::invalid_argument on non-positive capacities/resistances.
ContinuousLtiSystem rc_system(const RcParams& p);

/// Input-output truth of the RC plant including the disturbance level
/// d = a_0 * T_r. Convenience wrapper over rc_system + io_form.
IoCoefficients rc_io_truth(const RcParams& p);

/// Inverse map from second-order IO coefficients back to physical RC
/// parameters. Throws Unphysical naming the violated inequality.
RcParams io_to_physical(const IoCoefficients& io);

/// Deterministic excitation profiles for the simulator.
struct InputProfile {
    enum class Kind { Pulse, Prbs, Sine, Constant };
    Kind kind = Kind::Pulse;
    double amplitude = 1.5;
    double period = 1200.0;     // pulse/sine period, seconds
    double duty = 0.5;          // pulse duty cycle
    double offset = 0.0;        // additive constant
    double chip_time = 60.0;    // PRBS chip duration, seconds
    int prbs_bits = 10;         // LFSR register width (7, 10 or 15)
    std::uint64_t seed = 1;     // PRBS phase/seed
};

/// Uniformly sampled record of one simulation run. y is the measured output
/// (T_m for the RC plant); x_true holds the full state, one row per sample.
struct Trajectory {
    double ts = 0.0;
    std::vector<double> t;
    std::vector<double> u;
    std::vector<double> y;
    Matrix x_true;              // (samples) x n, empty for imported logs
    double noise_amplitude = 0.0;
    std::uint64_t noise_seed = 0;
};

/// Input value at time tau. Pure and deterministic per profile (PRBS chips
/// come from a maximal-length LFSR seeded by profile.seed).
double eval_input(const InputProfile& profile, double tau);

/// Fixed-step classical RK4 integration with zero-order-held input: u is
/// sampled at each grid point and held constant across the step.
/// `disturbance_value` is the constant driving the system's disturbance
/// channel (T_r for the RC plant); ignored when the system has none.
Trajectory simulate(const ContinuousLtiSystem& sys, const InputProfile& profile,
                    const Vector& x0, double ts, double duration,
                    double disturbance_value = 0.0);

/// Adds uniform(-amplitude, +amplitude) noise to y only; deterministic per
/// seed, true state untouched.
Trajectory add_noise(const Trajectory& traj, double amplitude, std::uint64_t seed);

/// Equilibrium state of the RC plant with zero heater input: both nodes at
/// room temperature.
Vector rc_equilibrium(const RcParams& p);

}  // namespace mfest
