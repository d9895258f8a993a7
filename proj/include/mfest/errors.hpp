#pragma once

#include <stdexcept>
#include <string>

namespace mfest {

/// Base class for all estimation-related failures.
struct EstimationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Observability matrix is rank deficient (or numerically near-singular).
struct NotObservable : EstimationError {
    explicit NotObservable(double cond)
        : EstimationError("system is not observable (cond(O) = " + std::to_string(cond) + ")"),
          condition_number(cond) {}
    double condition_number;
};

/// A receding-horizon window was queried before it filled up.
struct WindowNotReady : EstimationError {
    WindowNotReady() : EstimationError("signal window is not full yet") {}
};

/// The stacked constraint system of the time-varying kernel solver lost rank
/// (typically a non-exciting window, e.g. y identically zero).
struct RankDeficient : EstimationError {
    RankDeficient(int achieved, int required)
        : EstimationError("kernel constraint system is rank deficient (rank " +
                          std::to_string(achieved) + " of " + std::to_string(required) + ")"),
          achieved_rank(achieved),
          required_rank(required) {}
    int achieved_rank;
    int required_rank;
};

/// The information/Gramian matrix of a least-squares stage is near singular.
struct SingularGramian : EstimationError {
    explicit SingularGramian(double cond)
        : EstimationError("singular information matrix (cond = " + std::to_string(cond) + ")"),
          condition_number(cond) {}
    double condition_number;
};

/// The boundary-weight matrix of the state estimator cannot be inverted.
struct SingularWl : EstimationError {
    explicit SingularWl(double cond)
        : EstimationError("singular state-estimator weight matrix (cond = " +
                          std::to_string(cond) + ")"),
          condition_number(cond) {}
    double condition_number;
};

/// Observer gains leave A - L*C non-Hurwitz.
struct UnstableObserver : EstimationError {
    explicit UnstableObserver(double worst_real_part)
        : EstimationError("observer error dynamics unstable (max Re(lambda) = " +
                          std::to_string(worst_real_part) + ")"),
          max_real_part(worst_real_part) {}
    double max_real_part;
};

/// Coefficients violate a physical-realizability inequality of the RC map.
struct Unphysical : EstimationError {
    explicit Unphysical(const std::string& violated)
        : EstimationError("coefficients are not physically realizable: " + violated),
          violated_constraint(violated) {}
    std::string violated_constraint;
};

/// Kernel fails the boundary conditions of every modulating-function class.
struct NotAModulatingFunction : EstimationError {
    NotAModulatingFunction() : EstimationError("kernel vanishes at neither boundary") {}
};

/// The measured signal carries no usable variation (e.g. constant y in a fit).
struct DegenerateSignal : EstimationError {
    DegenerateSignal() : EstimationError("measured signal is constant") {}
};

}  // namespace mfest
