#pragma once

#include "trajcm/assoc.hpp"
#include "trajcm/common.hpp"
#include "trajcm/events.hpp"
#include "trajcm/flow.hpp"
#include "trajcm/iwe.hpp"
#include "trajcm/metrics.hpp"
#include "trajcm/objective.hpp"
#include "trajcm/optimize.hpp"
#include "trajcm/parallel.hpp"
#include "trajcm/synth.hpp"
#include "trajcm/trajectory.hpp"
#include "trajcm/warp.hpp"
