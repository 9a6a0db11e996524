/*
 * Copyright 2026 The revsde Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef REVSDE_ERRORS_HPP
#define REVSDE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace revsde {

/// A solve produced a non-finite value or failed a reversibility check.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// An operation would exceed its configured memory ceiling.
class MemoryLimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace revsde

#endif  // REVSDE_ERRORS_HPP
