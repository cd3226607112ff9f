#pragma once

#include "femdiff/config.hpp"
#include "femdiff/core.hpp"
#include "femdiff/data.hpp"
#include "femdiff/denoiser.hpp"
#include "femdiff/fem.hpp"
#include "femdiff/guidance.hpp"
#include "femdiff/io.hpp"
#include "femdiff/mesh.hpp"
#include "femdiff/metrics.hpp"
#include "femdiff/network.hpp"
#include "femdiff/nn.hpp"
#include "femdiff/randfield.hpp"
#include "femdiff/score.hpp"
#include "femdiff/sde.hpp"
#include "femdiff/train.hpp"
