#pragma once

#include "delaycast/errors.hpp"
#include "delaycast/stats.hpp"
#include "delaycast/triangle.hpp"
#include "delaycast/distributions.hpp"
#include "delaycast/splines.hpp"
#include "delaycast/model.hpp"
#include "delaycast/kernels.hpp"
#include "delaycast/mcmc.hpp"
#include "delaycast/diagnostics.hpp"
#include "delaycast/predictive.hpp"
#include "delaycast/simulator.hpp"
#include "delaycast/io.hpp"
