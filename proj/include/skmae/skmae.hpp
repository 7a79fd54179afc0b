#pragma once

#include "skmae/errors.hpp"
#include "skmae/rng.hpp"
#include "skmae/tensor.hpp"
#include "skmae/ops.hpp"
#include "skmae/gradcheck.hpp"
#include "skmae/optim.hpp"
#include "skmae/skeleton.hpp"
#include "skmae/masking.hpp"
#include "skmae/backbones.hpp"
#include "skmae/data.hpp"
#include "skmae/skeletonmae.hpp"
#include "skmae/strl.hpp"
#include "skmae/checkpoint.hpp"
#include "skmae/config.hpp"
#include "skmae/pipeline.hpp"
