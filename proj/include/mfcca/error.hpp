// mfcca/error.hpp

// Copyright 2026  The mfcca authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace mfcca {

// Base of all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/extent mismatch between tensors or against an operation contract.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// A precondition of an operation was violated (not a shape issue).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Non-finite value produced or consumed where finiteness is required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Token not present in a vocabulary.
class VocabularyError : public Error {
 public:
  explicit VocabularyError(const std::string& msg) : Error(msg) {}
};

// Bad configuration file, unknown key, or unusable command-line input.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem/serialization failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace mfcca
