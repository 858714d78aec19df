// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_MIDUS_HPP_
#define MIDUS_MIDUS_HPP_

#include "midus/core/model.hpp"
#include "midus/core/parameters.hpp"
#include "midus/io/bench.hpp"
#include "midus/io/checkpoint.hpp"
#include "midus/io/config.hpp"
#include "midus/memory/accounting.hpp"
#include "midus/memory/retrieval.hpp"
#include "midus/train/gradcheck.hpp"
#include "midus/train/head_importance.hpp"
#include "midus/train/model_backward.hpp"
#include "midus/train/optimizer.hpp"
#include "midus/train/trainer.hpp"
#include "midus/upscale/policy.hpp"
#include "midus/upscale/upscaler.hpp"

#endif  // MIDUS_MIDUS_HPP_
