#pragma once

#include "frnet/augment.hpp"
#include "frnet/error.hpp"
#include "frnet/geometry.hpp"
#include "frnet/metrics.hpp"
#include "frnet/model.hpp"
#include "frnet/nn/checkpoint.hpp"
#include "frnet/nn/gradcheck.hpp"
#include "frnet/nn/kernels.hpp"
#include "frnet/nn/tensor.hpp"
#include "frnet/rng.hpp"
#include "frnet/scan_io.hpp"
#include "frnet/supervision.hpp"
#include "frnet/train.hpp"
