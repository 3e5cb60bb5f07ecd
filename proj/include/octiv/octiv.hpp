#pragma once

// Umbrella header: physics-regularized inverse scattering for OCT.

#include "octiv/config.hpp"
#include "octiv/dataset.hpp"
#include "octiv/ehf.hpp"
#include "octiv/field.hpp"
#include "octiv/io.hpp"
#include "octiv/losses.hpp"
#include "octiv/mc.hpp"
#include "octiv/metrics.hpp"
#include "octiv/parallel.hpp"
#include "octiv/phantom.hpp"
#include "octiv/rng.hpp"
#include "octiv/solver.hpp"
#include "octiv/speckle.hpp"
