// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace duallm {

/// Invalid or inconsistent configuration (bad sizes, unknown keys, too little data).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller passed values outside an operation's domain.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (tokenizer, checkpoint, task, results files).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure during training or fitting (NaN loss, failed factorization).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace duallm
