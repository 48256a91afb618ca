#pragma once

// Umbrella header: the whole binarization toolkit.

#include "docbin/baselines.hpp"
#include "docbin/common.hpp"
#include "docbin/datagen.hpp"
#include "docbin/features.hpp"
#include "docbin/image.hpp"
#include "docbin/inference.hpp"
#include "docbin/loss.hpp"
#include "docbin/metrics.hpp"
#include "docbin/network.hpp"
#include "docbin/ops.hpp"
#include "docbin/pseudo_weights.hpp"
#include "docbin/tensor.hpp"
#include "docbin/trainer.hpp"
