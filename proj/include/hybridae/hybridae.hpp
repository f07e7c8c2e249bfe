#pragma once

// Umbrella header: the full simulation / sensitivity / identification stack.

#include "hybridae/adjoint.hpp"
#include "hybridae/algebraic.hpp"
#include "hybridae/benchmarks.hpp"
#include "hybridae/errors.hpp"
#include "hybridae/forward_sensitivity.hpp"
#include "hybridae/gradient.hpp"
#include "hybridae/io.hpp"
#include "hybridae/model.hpp"
#include "hybridae/optimize.hpp"
#include "hybridae/rng.hpp"
#include "hybridae/simulate.hpp"
#include "hybridae/target.hpp"
#include "hybridae/trajectory.hpp"
#include "hybridae/types.hpp"
