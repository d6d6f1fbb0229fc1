#pragma once

#include "graphdiff/checkpoint.hpp"
#include "graphdiff/common.hpp"
#include "graphdiff/config.hpp"
#include "graphdiff/data.hpp"
#include "graphdiff/denoiser.hpp"
#include "graphdiff/diffusion.hpp"
#include "graphdiff/evaluation.hpp"
#include "graphdiff/schedule.hpp"
#include "graphdiff/skeleton.hpp"
#include "graphdiff/training.hpp"
