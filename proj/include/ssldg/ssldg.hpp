#pragma once

// Umbrella header for the full pipeline.

#include "ssldg/adam.hpp"
#include "ssldg/augment.hpp"
#include "ssldg/bezier.hpp"
#include "ssldg/checkpoint.hpp"
#include "ssldg/config.hpp"
#include "ssldg/dataio.hpp"
#include "ssldg/errors.hpp"
#include "ssldg/gradcheck.hpp"
#include "ssldg/image.hpp"
#include "ssldg/losses.hpp"
#include "ssldg/model.hpp"
#include "ssldg/pgm.hpp"
#include "ssldg/rng.hpp"
#include "ssldg/saliency.hpp"
#include "ssldg/serialize.hpp"
#include "ssldg/tensor.hpp"
#include "ssldg/trainer.hpp"
