#pragma once

#include "wraploss/analysis.hpp"
#include "wraploss/core_nn.hpp"
#include "wraploss/datagen.hpp"
#include "wraploss/errors.hpp"
#include "wraploss/experiment.hpp"
#include "wraploss/gradcheck.hpp"
#include "wraploss/losses.hpp"
#include "wraploss/trainer.hpp"
