#pragma once

/// @file errors.hpp
/// @brief Exception types thrown by the library.
///
/// Every failure mode that callers are expected to handle gets its own type,
/// grouped under a common base so the CLI can map them to exit codes
/// (configuration errors vs. numerical/validation errors).

#include <stdexcept>
#include <string>

namespace striprw {

/// Base class of all library exceptions.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Configuration / input-shape errors (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// Numerical or model-validation errors (CLI exit code 3).
struct NumericError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Environment construction and validation
// ---------------------------------------------------------------------------

/// A layer's rows do not sum to one within tolerance, or entries are negative.
struct NonStochasticSpec : ConfigError {
    using ConfigError::ConfigError;
};

/// Two environments (or a spec and its data) disagree on the strip width m.
struct WidthMismatch : ConfigError {
    using ConfigError::ConfigError;
};

/// Unrecognized generator tag in an environment spec.
struct UnknownGeneratorTag : ConfigError {
    using ConfigError::ConfigError;
};

/// (I - R_n) is numerically singular, so within-layer dynamics are degenerate.
struct SingularLayer : NumericError {
    using NumericError::NumericError;
};

// ---------------------------------------------------------------------------
// Hierarchy computation
// ---------------------------------------------------------------------------

/// Buffer too small: boundary-seed influence at the window edge exceeds the
/// requested tolerance even after the allowed number of buffer doublings.
struct BufferTooSmall : NumericError {
    using NumericError::NumericError;
};

/// A resolvent (I - R - Q zeta)-type matrix could not be inverted.
struct SingularResolvent : NumericError {
    using NumericError::NumericError;
};

/// A fixed-point iteration failed to converge within its iteration budget.
struct NonConvergent : NumericError {
    using NumericError::NumericError;
};

// ---------------------------------------------------------------------------
// Harmonic analysis (martingale coordinate, invariant measure)
// ---------------------------------------------------------------------------

/// The multiplicative scale of u collapsed toward zero or overflowed,
/// indicating an unbounded potential on the requested window.
struct DegenerateMartingale : NumericError {
    using NumericError::NumericError;
};

/// Empirical martingale increments exceed the configured bound, signalling
/// unbounded-potential input where a bounded one is required.
struct UnboundedIncrements : NumericError {
    using NumericError::NumericError;
};

/// A normalization step hit a nearly-zero divisor (e.g. slope of the layer
/// sums, or the flux used to scale the invariant measure).
struct NormalizationDegenerate : NumericError {
    using NumericError::NumericError;
};

/// Tail averages used for coboundary ratios fail their Cauchy criterion.
struct TailNotCauchy : NumericError {
    using NumericError::NumericError;
};

/// A truncated series could not certify the requested truncation error
/// before running out of window.
struct TruncationInsufficient : NumericError {
    using NumericError::NumericError;
};

/// The analysis window is too short for the requested fit or average.
struct InsufficientWindow : ConfigError {
    using ConfigError::ConfigError;
};

// ---------------------------------------------------------------------------
// Green function solves
// ---------------------------------------------------------------------------

/// The interior linear system of an absorption problem is singular.
struct SingularInterior : NumericError {
    using NumericError::NumericError;
};

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// A trajectory attempted to step outside the realized environment window.
/// Simulations never clamp; widen the window instead.
struct WindowEscape : NumericError {
    using NumericError::NumericError;
};

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// An empirical sample set is empty where a statistic is required.
struct EmptySample : NumericError {
    using NumericError::NumericError;
};

/// A point-probability cell has too few counts for a meaningful ratio.
struct InsufficientCounts : NumericError {
    using NumericError::NumericError;
};

/// Run-configuration JSON is malformed, has unknown keys, or out-of-range
/// values.
struct ConfigInvalid : ConfigError {
    using ConfigError::ConfigError;
};

/// An input that must be strictly positive (entrywise) is not.
struct NonPositiveInput : NumericError {
    using NumericError::NumericError;
};

}  // namespace striprw
