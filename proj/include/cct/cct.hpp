#pragma once

#include "cct/ablation.hpp"
#include "cct/backbone.hpp"
#include "cct/checkpoint.hpp"
#include "cct/config.hpp"
#include "cct/data.hpp"
#include "cct/digest.hpp"
#include "cct/error.hpp"
#include "cct/grad_check.hpp"
#include "cct/log.hpp"
#include "cct/memory.hpp"
#include "cct/model.hpp"
#include "cct/nn.hpp"
#include "cct/ops.hpp"
#include "cct/optim.hpp"
#include "cct/predictive.hpp"
#include "cct/priors.hpp"
#include "cct/rng.hpp"
#include "cct/schedule.hpp"
#include "cct/self_model.hpp"
#include "cct/simplicial.hpp"
#include "cct/synthetic.hpp"
#include "cct/tensor.hpp"
#include "cct/trainer.hpp"
