#ifndef RELIGHT_RELIGHT_HPP
#define RELIGHT_RELIGHT_HPP

#include "relight/backbone/grad_check.hpp"
#include "relight/backbone/layers.hpp"
#include "relight/backbone/ops.hpp"
#include "relight/backbone/tape.hpp"
#include "relight/checkpoint.hpp"
#include "relight/encoders.hpp"
#include "relight/errors.hpp"
#include "relight/evaluation.hpp"
#include "relight/imaging.hpp"
#include "relight/inference.hpp"
#include "relight/inpaint.hpp"
#include "relight/lighting_codec.hpp"
#include "relight/losses.hpp"
#include "relight/metrics.hpp"
#include "relight/model.hpp"
#include "relight/model_config.hpp"
#include "relight/renderer.hpp"
#include "relight/rng.hpp"
#include "relight/synthdata.hpp"
#include "relight/tensor.hpp"
#include "relight/training.hpp"

#endif // RELIGHT_RELIGHT_HPP
