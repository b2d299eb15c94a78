#pragma once

#include "spde/errors.hpp"
#include "spde/philox.hpp"
#include "spde/basis.hpp"
#include "spde/noise.hpp"
#include "spde/coefficients.hpp"
#include "spde/schemes.hpp"
#include "spde/experiments.hpp"
#include "spde/config.hpp"
#include "spde/cli.hpp"
