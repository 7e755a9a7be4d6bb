#pragma once

#include "cellinr/checkpoint.hpp"
#include "cellinr/config.hpp"
#include "cellinr/error.hpp"
#include "cellinr/loss.hpp"
#include "cellinr/metrics.hpp"
#include "cellinr/nn/adam.hpp"
#include "cellinr/nn/encoding.hpp"
#include "cellinr/nn/matrix.hpp"
#include "cellinr/nn/mlp.hpp"
#include "cellinr/nn/networks.hpp"
#include "cellinr/nn/tape.hpp"
#include "cellinr/parallel.hpp"
#include "cellinr/phantom.hpp"
#include "cellinr/profile.hpp"
#include "cellinr/renderer.hpp"
#include "cellinr/rng.hpp"
#include "cellinr/sampler.hpp"
#include "cellinr/struct_amp.hpp"
#include "cellinr/trainer.hpp"
#include "cellinr/version.hpp"
#include "cellinr/volume.hpp"
#include "cellinr/volume_io.hpp"
