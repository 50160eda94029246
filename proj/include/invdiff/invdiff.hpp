#pragma once

#include "invdiff/config.hpp"
#include "invdiff/detect.hpp"
#include "invdiff/grid.hpp"
#include "invdiff/io.hpp"
#include "invdiff/kernels.hpp"
#include "invdiff/mathcore.hpp"
#include "invdiff/operator.hpp"
#include "invdiff/physics.hpp"
#include "invdiff/solver.hpp"
