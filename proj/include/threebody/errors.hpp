#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

namespace threebody {

// Root of every domain failure raised by the library. kind() is a stable
// machine-readable name used by the CLI error line.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "Error"; }
};

// Compact rendering of a real for error messages.
inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

#define THREEBODY_DEFINE_ERROR(Name, Base)                                   \
    class Name : public Base {                                               \
    public:                                                                  \
        using Base::Base;                                                    \
        const char* kind() const noexcept override { return #Name; }         \
    };

// Failures that happen while advancing a state carry the simulation time.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, double time)
        : Error(what + " (t = " + format_real(time) + ")"), time_(time) {}
    double time() const noexcept { return time_; }
    const char* kind() const noexcept override { return "IntegrationError"; }

private:
    double time_;
};

THREEBODY_DEFINE_ERROR(SingularState, IntegrationError)
THREEBODY_DEFINE_ERROR(StepUnderflow, IntegrationError)
THREEBODY_DEFINE_ERROR(StepLimitExceeded, IntegrationError)
THREEBODY_DEFINE_ERROR(NonFiniteState, IntegrationError)

THREEBODY_DEFINE_ERROR(ZeroTotalMass, Error)
THREEBODY_DEFINE_ERROR(RejectionExhausted, Error)
THREEBODY_DEFINE_ERROR(FormatError, Error)
THREEBODY_DEFINE_ERROR(VersionMismatch, Error)
THREEBODY_DEFINE_ERROR(DegenerateReservoir, Error)
THREEBODY_DEFINE_ERROR(IllConditioned, Error)
THREEBODY_DEFINE_ERROR(Untrained, Error)
THREEBODY_DEFINE_ERROR(DimensionMismatch, Error)
THREEBODY_DEFINE_ERROR(EmptyBatch, Error)
THREEBODY_DEFINE_ERROR(LengthMismatch, Error)
THREEBODY_DEFINE_ERROR(TooFewValues, Error)
THREEBODY_DEFINE_ERROR(ModelDatasetMismatch, Error)
THREEBODY_DEFINE_ERROR(ConfigError, Error)
THREEBODY_DEFINE_ERROR(UsageError, Error)

#undef THREEBODY_DEFINE_ERROR

// Power iteration hit its cap; the best available estimate is attached.
class NoConvergence : public Error {
public:
    NoConvergence(const std::string& what, double best_estimate)
        : Error(what), best_estimate_(best_estimate) {}
    double best_estimate() const noexcept { return best_estimate_; }
    const char* kind() const noexcept override { return "NoConvergence"; }

private:
    double best_estimate_;
};

class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(const std::string& what, long epoch)
        : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    long epoch() const noexcept { return epoch_; }
    const char* kind() const noexcept override { return "NonFiniteLoss"; }

private:
    long epoch_;
};

}  // namespace threebody
