// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// A small select/aggregate evaluator over exact rationals, enough to run the
// unit left-shift construction and check it against direct indexing.

#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace duallm::rasp {

using Rational = boost::multiprecision::cpp_rational;

struct SeqOperator {
    std::vector<Rational> values;

    std::size_t size() const { return values.size(); }
    const Rational& operator[](std::size_t i) const { return values[i]; }
    bool operator==(const SeqOperator&) const = default;
};

/// Binary n x n matrix, row-major.
class Selector {
public:
    explicit Selector(std::size_t n) : n_(n), bits_(n * n, 0) {}

    std::size_t size() const { return n_; }
    bool operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }
    bool operator==(const Selector&) const = default;

private:
    std::size_t n_;
    std::vector<std::uint8_t> bits_;
};

using Predicate = std::function<bool(const Rational&, const Rational&)>;
using UnaryFn = std::function<Rational(const Rational&)>;
using BinaryFn = std::function<Rational(const Rational&, const Rational&)>;

/// Throws InputError for an empty sequence.
SeqOperator make_seq(std::vector<Rational> values);

SeqOperator indices(std::size_t n);
SeqOperator constant(std::size_t n, const Rational& c);

/// Element-wise maps.
SeqOperator map(const SeqOperator& x, const UnaryFn& f);
SeqOperator zip(const SeqOperator& x, const SeqOperator& y, const BinaryFn& f);

/// M_ij = p(x_i, y_j).
Selector select(const SeqOperator& x, const SeqOperator& y, const Predicate& p);

/// Row i: mean of x_j over selected j, or c when the row selects nothing.
SeqOperator aggregate(const Selector& m, const SeqOperator& x, const Rational& c);

/// aggregate(select(indices + 1, indices, ==), z; z_n): z_{i+1} for i < n, z_n last.
SeqOperator shift(const SeqOperator& z);

/// Sequence length as a sequence operator, built from select/aggregate only.
SeqOperator length(const SeqOperator& x);

struct Program {
    std::string name;
    std::function<SeqOperator(const SeqOperator&)> run;
};

/// Five programs composed from select, aggregate and element-wise maps:
/// affine, prefix_mean, previous, reverse, centered_square.
std::vector<Program> fixture_programs();

/// Parses "3", "-2/5" or "0.25".
Rational parse_rational(std::string_view text);
std::string to_string(const Rational& r);
std::string to_string(const SeqOperator& s);

}  // namespace duallm::rasp
