// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "slimconv/autodiff.hpp"
#include "slimconv/checkpoint.hpp"
#include "slimconv/config.hpp"
#include "slimconv/cost_model.hpp"
#include "slimconv/data.hpp"
#include "slimconv/errors.hpp"
#include "slimconv/kernels.hpp"
#include "slimconv/kv.hpp"
#include "slimconv/model.hpp"
#include "slimconv/ops.hpp"
#include "slimconv/optim.hpp"
#include "slimconv/param_store.hpp"
#include "slimconv/random.hpp"
#include "slimconv/report.hpp"
#include "slimconv/run.hpp"
#include "slimconv/search.hpp"
#include "slimconv/slimming.hpp"
#include "slimconv/tensor.hpp"
#include "slimconv/training.hpp"
