// Copyright 2026 The AIRSQ Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "airsq/anchors.hpp"
#include "airsq/checkpoint.hpp"
#include "airsq/common.hpp"
#include "airsq/loss.hpp"
#include "airsq/metrics.hpp"
#include "airsq/model.hpp"
#include "airsq/nn.hpp"
#include "airsq/prediction.hpp"
#include "airsq/prediction_io.hpp"
#include "airsq/raster.hpp"
#include "airsq/sampling.hpp"
#include "airsq/scenario.hpp"
#include "airsq/scenario_io.hpp"
#include "airsq/spline.hpp"
#include "airsq/synth.hpp"
#include "airsq/train.hpp"
