#pragma once

#include "tactile_cal/report/artifacts.hpp"
#include "tactile_cal/report/plot.hpp"
