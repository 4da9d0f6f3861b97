#pragma once

// Umbrella header: population simulation, chain abstraction, aggregation,
// error bounds, set-point control, and the experiment commands.

#include "tclagg/aggregate.hpp"
#include "tclagg/bounds.hpp"
#include "tclagg/chain.hpp"
#include "tclagg/commands.hpp"
#include "tclagg/config.hpp"
#include "tclagg/control.hpp"
#include "tclagg/gaussian.hpp"
#include "tclagg/heterogeneity.hpp"
#include "tclagg/io.hpp"
#include "tclagg/partition.hpp"
#include "tclagg/reduction.hpp"
#include "tclagg/rng.hpp"
#include "tclagg/tcl.hpp"
