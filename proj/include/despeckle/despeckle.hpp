#pragma once

#include "despeckle/activation.hpp"
#include "despeckle/batchnorm.hpp"
#include "despeckle/binary_io.hpp"
#include "despeckle/checkpoint.hpp"
#include "despeckle/conv.hpp"
#include "despeckle/dataset_io.hpp"
#include "despeckle/errors.hpp"
#include "despeckle/gradcheck.hpp"
#include "despeckle/image.hpp"
#include "despeckle/image_io.hpp"
#include "despeckle/inference.hpp"
#include "despeckle/keyvalue.hpp"
#include "despeckle/loss.hpp"
#include "despeckle/metrics.hpp"
#include "despeckle/network.hpp"
#include "despeckle/optimizer.hpp"
#include "despeckle/rng.hpp"
#include "despeckle/scenes.hpp"
#include "despeckle/speckle.hpp"
#include "despeckle/tensor.hpp"
#include "despeckle/train.hpp"
