#pragma once

// Umbrella header for the D-NTSC / D-NTSCC distributed image codec library.

#include "dntsc/alignment.hpp"
#include "dntsc/bitstream.hpp"
#include "dntsc/channel.hpp"
#include "dntsc/entropy.hpp"
#include "dntsc/harness.hpp"
#include "dntsc/jscc.hpp"
#include "dntsc/models.hpp"
#include "dntsc/quant.hpp"
#include "dntsc/range_coder.hpp"
#include "dntsc/trainer.hpp"
#include "dntsc/training.hpp"
#include "dntsc/transforms.hpp"
