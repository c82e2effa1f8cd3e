#pragma once

#include "tactile_cal/eval/ablation.hpp"
#include "tactile_cal/eval/errors.hpp"
#include "tactile_cal/eval/stats.hpp"
