#pragma once

#include "shiftlab/checkpoint.hpp"
#include "shiftlab/config.hpp"
#include "shiftlab/data.hpp"
#include "shiftlab/ensemble.hpp"
#include "shiftlab/errors.hpp"
#include "shiftlab/linalg.hpp"
#include "shiftlab/metrics.hpp"
#include "shiftlab/nn.hpp"
#include "shiftlab/report.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/runner.hpp"
#include "shiftlab/training.hpp"
