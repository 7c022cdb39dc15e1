#pragma once

#include "adam.hpp"
#include "checkpoint.hpp"
#include "clustering.hpp"
#include "dataset.hpp"
#include "image.hpp"
#include "layers.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "netpbm.hpp"
#include "parallel.hpp"
#include "tensor.hpp"
#include "training.hpp"
