#pragma once

#include "pseudoblur/autodiff.hpp"
#include "pseudoblur/checkpoint.hpp"
#include "pseudoblur/config.hpp"
#include "pseudoblur/image.hpp"
#include "pseudoblur/losses.hpp"
#include "pseudoblur/nn.hpp"
#include "pseudoblur/optim.hpp"
#include "pseudoblur/parallel.hpp"
#include "pseudoblur/png_io.hpp"
#include "pseudoblur/prior.hpp"
#include "pseudoblur/rng.hpp"
#include "pseudoblur/synth.hpp"
#include "pseudoblur/tensor.hpp"
#include "pseudoblur/training.hpp"
