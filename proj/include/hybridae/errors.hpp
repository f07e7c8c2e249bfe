#pragma once

// Exception types thrown by the simulation, differentiation and driver layers.
// Each maps to one failure condition surfaced through the CLI as exit code 2.

#include <stdexcept>
#include <string>

namespace hybridae {

// Base class for all library failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed user input (bad dimensions, negative tolerances, unknown names).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Chord-Newton iteration on the algebraic system failed to reach tolerance.
class AlgebraicFailure : public Error {
 public:
  using Error::Error;
};

// An algebraic Jacobian was singular (even after regularization where allowed).
class SingularJacobian : public Error {
 public:
  using Error::Error;
};

// Adaptive integration drove the step size below the configured minimum.
class StiffnessFailure : public Error {
 public:
  using Error::Error;
};

// Event root finding was invoked on a bracket without a sign change.
class BracketError : public Error {
 public:
  using Error::Error;
};

// Post-event reinitialization of the algebraic state failed.
class ReinitFailure : public Error {
 public:
  using Error::Error;
};

// A located event violates the transversality requirement, so event-time
// derivatives are undefined.
class GrazingEvent : public Error {
 public:
  using Error::Error;
};

// A linear solve in the reverse sweep hit a singular step Jacobian.
class AdjointLinearFailure : public Error {
 public:
  using Error::Error;
};

// The event residual Jacobian lost rank; the pending-event system is not
// solvable in the assumed form.
class DegenerateEvent : public Error {
 public:
  using Error::Error;
};

// A trajectory handed to the adjoint could not be brought to feasibility
// (residual norms stayed above threshold after re-solving).
class StaleTrajectory : public Error {
 public:
  using Error::Error;
};

// Benchmark factory preconditions violated (overlapping balls, bad counts).
class SetupError : public Error {
 public:
  using Error::Error;
};

// A numeric evaluation produced non-finite values where finite ones are
// required.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace hybridae
