#pragma once

#include "prefopt/config.hpp"
#include "prefopt/error.hpp"
#include "prefopt/experiments.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/numeric.hpp"
#include "prefopt/optim.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/report.hpp"
#include "prefopt/verify.hpp"
#include "prefopt/world.hpp"
#include "prefopt/worlds.hpp"
