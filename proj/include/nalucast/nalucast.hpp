/*
 * Copyright 2026 The nalucast authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "nalucast/autodiff.hpp"
#include "nalucast/benchmarks.hpp"
#include "nalucast/common.hpp"
#include "nalucast/data.hpp"
#include "nalucast/layers.hpp"
#include "nalucast/models.hpp"
#include "nalucast/tensor.hpp"
#include "nalucast/training.hpp"
