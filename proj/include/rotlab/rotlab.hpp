#pragma once

#include "rotlab/batch_norm.hpp"
#include "rotlab/config.hpp"
#include "rotlab/core_math.hpp"
#include "rotlab/equilibrium.hpp"
#include "rotlab/experiment.hpp"
#include "rotlab/optimizers.hpp"
#include "rotlab/rotational.hpp"
#include "rotlab/simple_system.hpp"
#include "rotlab/telemetry.hpp"
