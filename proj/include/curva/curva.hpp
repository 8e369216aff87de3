#pragma once

#include "curva/builders.hpp"
#include "curva/config.hpp"
#include "curva/elliptic.hpp"
#include "curva/error.hpp"
#include "curva/grid.hpp"
#include "curva/monotone.hpp"
#include "curva/report.hpp"
#include "curva/scenario.hpp"
#include "curva/scenario_spec.hpp"
#include "curva/verify.hpp"
