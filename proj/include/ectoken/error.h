// Copyright 2026 The ectoken Authors
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

#ifndef ECTOKEN_ERROR_H_
#define ECTOKEN_ERROR_H_

#include <functional>
#include <stdexcept>
#include <string>

namespace ectoken {

//! Bad input: malformed files, violated preconditions, schema mismatches.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

//! A loss or activation became non-finite.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

//! Non-fatal diagnostics go through one replaceable sink (stderr by default).
using WarningHandler = std::function<void(const std::string&)>;
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace ectoken

#endif  // ECTOKEN_ERROR_H_
