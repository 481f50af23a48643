#pragma once

#include "dsal/acquisition.hpp"
#include "dsal/checkpoint.hpp"
#include "dsal/core_types.hpp"
#include "dsal/datagen.hpp"
#include "dsal/error.hpp"
#include "dsal/io.hpp"
#include "dsal/metrics.hpp"
#include "dsal/orchestrator.hpp"
#include "dsal/report.hpp"
#include "dsal/rng.hpp"
#include "dsal/solver.hpp"
#include "dsal/surrogate.hpp"
