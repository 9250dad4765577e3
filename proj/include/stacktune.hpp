#pragma once

// Umbrella header.

#include "stacktune/tensor.hpp"
#include "stacktune/ops.hpp"
#include "stacktune/nn.hpp"
#include "stacktune/optim.hpp"
#include "stacktune/encoder.hpp"
#include "stacktune/heads.hpp"
#include "stacktune/data.hpp"
#include "stacktune/metrics.hpp"
#include "stacktune/adapt.hpp"
#include "stacktune/gradcheck.hpp"
#include "stacktune/gradcheck_suite.hpp"
#include "stacktune/config.hpp"
#include "stacktune/commands.hpp"
