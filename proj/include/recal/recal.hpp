/*
 * Copyright 2026 The recal Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "recal/calibration.hpp"
#include "recal/config.hpp"
#include "recal/embedding_store.hpp"
#include "recal/error.hpp"
#include "recal/kv.hpp"
#include "recal/losses.hpp"
#include "recal/metrics.hpp"
#include "recal/numeric.hpp"
#include "recal/pipeline.hpp"
#include "recal/projection_head.hpp"
#include "recal/rng.hpp"
#include "recal/training.hpp"
