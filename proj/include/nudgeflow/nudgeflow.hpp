#pragma once

#include "nudgeflow/errors.hpp"
#include "nudgeflow/mesh.hpp"
#include "nudgeflow/quadrature.hpp"
#include "nudgeflow/linalg.hpp"
#include "nudgeflow/space.hpp"
#include "nudgeflow/assembly.hpp"
#include "nudgeflow/observe.hpp"
#include "nudgeflow/stepper.hpp"
#include "nudgeflow/cda.hpp"
#include "nudgeflow/bench.hpp"
#include "nudgeflow/config.hpp"
