#pragma once

// umbrella header

#include "lldn/adam.hpp"
#include "lldn/bev_encoder.hpp"
#include "lldn/checkpoint.hpp"
#include "lldn/errors.hpp"
#include "lldn/frame_io.hpp"
#include "lldn/gfc.hpp"
#include "lldn/grad_check.hpp"
#include "lldn/grid.hpp"
#include "lldn/head.hpp"
#include "lldn/heuristic.hpp"
#include "lldn/metrics.hpp"
#include "lldn/model.hpp"
#include "lldn/rng.hpp"
#include "lldn/rnf.hpp"
#include "lldn/runconfig.hpp"
#include "lldn/scene.hpp"
#include "lldn/tape.hpp"
#include "lldn/tensor.hpp"
#include "lldn/trainer.hpp"
#include "lldn/viz.hpp"
