#pragma once

#include "errors.hpp"
#include "random.hpp"
#include "stats.hpp"
#include "quadrature.hpp"
#include "io.hpp"
#include "tweedie.hpp"
#include "triangles.hpp"
#include "shock_model.hpp"
#include "glm.hpp"
#include "parallel.hpp"
#include "inference.hpp"
#include "forecast.hpp"
#include "diagnostics.hpp"
#include "cli.hpp"
