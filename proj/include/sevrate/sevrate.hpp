#ifndef SEVRATE_SEVRATE_HPP
#define SEVRATE_SEVRATE_HPP

// Umbrella header.

#include "sevrate/clean.hpp"
#include "sevrate/core.hpp"
#include "sevrate/csv.hpp"
#include "sevrate/experiment.hpp"
#include "sevrate/ratios.hpp"
#include "sevrate/rng.hpp"
#include "sevrate/simulate.hpp"
#include "sevrate/smooth.hpp"
#include "sevrate/solver.hpp"
#include "sevrate/tune.hpp"

#endif  // SEVRATE_SEVRATE_HPP
