#pragma once

#include "pmflq/errors.hpp"
#include "pmflq/numerics.hpp"
#include "pmflq/model.hpp"
#include "pmflq/builtin_models.hpp"
#include "pmflq/stability.hpp"
#include "pmflq/riccati.hpp"
#include "pmflq/affine.hpp"
#include "pmflq/synthesis.hpp"
#include "pmflq/moments.hpp"
#include "pmflq/random.hpp"
#include "pmflq/wasserstein.hpp"
#include "pmflq/montecarlo.hpp"
