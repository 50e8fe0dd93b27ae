#pragma once

#include "pvfuse/bench.hpp"
#include "pvfuse/combiners.hpp"
#include "pvfuse/ecdf.hpp"
#include "pvfuse/error.hpp"
#include "pvfuse/io.hpp"
#include "pvfuse/metrics.hpp"
#include "pvfuse/numerics.hpp"
#include "pvfuse/score_matrix.hpp"
#include "pvfuse/window.hpp"
