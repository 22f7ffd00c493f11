#pragma once

#include "pathrf/rng.hpp"
#include "pathrf/data.hpp"
#include "pathrf/pattern.hpp"
#include "pathrf/cart.hpp"
#include "pathrf/forest.hpp"
#include "pathrf/paw.hpp"
#include "pathrf/baselines.hpp"
#include "pathrf/stats.hpp"
#include "pathrf/bench.hpp"
