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

#include <stdexcept>
#include <string>

namespace cbt {

// Base of every error raised by the runtime.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent shapes, parameters or flags. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. recording ledger stages out of order. CLI exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad input data (labels out of range, empty datasets). CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed EENW / EESD / JSON payloads. CLI exit code 3.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace cbt
