// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mfr {

// File / container parsing problems: bad magic, truncation, malformed headers.
class format_error : public std::runtime_error {
public:
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

// Optimization blow-ups, non-finite losses, and other numerical failures.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// Violated data-structure invariants detected at runtime (inspect paths).
class invariant_error : public std::runtime_error {
public:
    explicit invariant_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mfr
