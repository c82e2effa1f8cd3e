#pragma once

#include "tactile_cal/touchnet/checkpoint.hpp"
#include "tactile_cal/touchnet/grad_check.hpp"
#include "tactile_cal/touchnet/layers.hpp"
#include "tactile_cal/touchnet/model.hpp"
#include "tactile_cal/touchnet/tensor.hpp"
#include "tactile_cal/touchnet/train.hpp"
