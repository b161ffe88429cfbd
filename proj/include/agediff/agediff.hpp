#pragma once

// Age-structured diffusive population dynamics: simulation, equilibria, and
// spectral stability analysis.

#include "agediff/cli.hpp"
#include "agediff/config.hpp"
#include "agediff/csv.hpp"
#include "agediff/diffusion.hpp"
#include "agediff/equilibrium.hpp"
#include "agediff/equilibrium_shooting.hpp"
#include "agediff/expression.hpp"
#include "agediff/linearization.hpp"
#include "agediff/model.hpp"
#include "agediff/spectral.hpp"
#include "agediff/stability.hpp"
#include "agediff/transport.hpp"
