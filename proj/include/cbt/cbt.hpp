/* Copyright 2026 The CBT Runtime Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include "cbt/binary_io.hpp"
#include "cbt/calibration.hpp"
#include "cbt/dataset.hpp"
#include "cbt/error.hpp"
#include "cbt/masked_exec.hpp"
#include "cbt/metrics.hpp"
#include "cbt/model.hpp"
#include "cbt/parallel.hpp"
#include "cbt/policy.hpp"
#include "cbt/tensor.hpp"
#include "cbt/thresholds.hpp"
#include "cbt/weights_io.hpp"
