#pragma once

#include "tsembed/classify.hpp"
#include "tsembed/data.hpp"
#include "tsembed/dataset_io.hpp"
#include "tsembed/embedder.hpp"
#include "tsembed/errors.hpp"
#include "tsembed/losses.hpp"
#include "tsembed/mining.hpp"
#include "tsembed/optim.hpp"
#include "tsembed/rng.hpp"
#include "tsembed/scenarios.hpp"
#include "tsembed/stats.hpp"
#include "tsembed/train.hpp"
