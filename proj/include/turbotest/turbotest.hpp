#pragma once

// Umbrella header for the early-termination library.

#include "turbotest/config.hpp"
#include "turbotest/core.hpp"
#include "turbotest/engine.hpp"
#include "turbotest/eval.hpp"
#include "turbotest/heuristics.hpp"
#include "turbotest/label.hpp"
#include "turbotest/learn/dataset.hpp"
#include "turbotest/learn/gbdt.hpp"
#include "turbotest/learn/mlp.hpp"
#include "turbotest/learn/model_file.hpp"
#include "turbotest/pipeline.hpp"
#include "turbotest/synth.hpp"
#include "turbotest/traceio.hpp"
#include "turbotest/util.hpp"
