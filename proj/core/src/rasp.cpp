// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/rasp.hpp"

#include <algorithm>
#include <cctype>

#include "duallm/errors.hpp"
#include "duallm/io.hpp"

namespace duallm::rasp {

namespace {

void require_same(const SeqOperator& x, const SeqOperator& y) {
    if (x.size() != y.size()) {
        throw InputError("sequence operators differ in length");
    }
}

}  // namespace

SeqOperator make_seq(std::vector<Rational> values) {
    if (values.empty()) {
        throw InputError("sequence operators need at least one element");
    }
    return SeqOperator{std::move(values)};
}

SeqOperator indices(std::size_t n) {
    std::vector<Rational> v;
    v.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        v.emplace_back(static_cast<long long>(i));
    }
    return make_seq(std::move(v));
}

SeqOperator constant(std::size_t n, const Rational& c) { return make_seq(std::vector<Rational>(n, c)); }

SeqOperator map(const SeqOperator& x, const UnaryFn& f) {
    SeqOperator out;
    out.values.reserve(x.size());
    for (const auto& v : x.values) {
        out.values.push_back(f(v));
    }
    return out;
}

SeqOperator zip(const SeqOperator& x, const SeqOperator& y, const BinaryFn& f) {
    require_same(x, y);
    SeqOperator out;
    out.values.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.values.push_back(f(x[i], y[i]));
    }
    return out;
}

Selector select(const SeqOperator& x, const SeqOperator& y, const Predicate& p) {
    require_same(x, y);
    Selector m(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) {
            m.set(i, j, p(x[i], y[j]));
        }
    }
    return m;
}

SeqOperator aggregate(const Selector& m, const SeqOperator& x, const Rational& c) {
    if (m.size() != x.size()) {
        throw InputError("selector and sequence differ in length");
    }
    SeqOperator out;
    out.values.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Rational sum = 0;
        long long count = 0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (m(i, j)) {
                sum += x[j];
                ++count;
            }
        }
        out.values.push_back(count == 0 ? c : Rational(sum / count));
    }
    return out;
}

SeqOperator shift(const SeqOperator& z) {
    if (z.size() == 0) {
        throw InputError("shift of an empty sequence");
    }
    const auto idx = indices(z.size());
    const auto next = map(idx, [](const Rational& i) { return Rational(i + 1); });
    const auto m = select(next, idx, [](const Rational& a, const Rational& b) { return a == b; });
    return aggregate(m, z, z.values.back());
}

SeqOperator length(const SeqOperator& x) {
    const auto idx = indices(x.size());
    const auto first = map(idx, [](const Rational& i) { return Rational(i == 0 ? 1 : 0); });
    const auto all = select(idx, idx, [](const Rational&, const Rational&) { return true; });
    const auto frac = aggregate(all, first, Rational(0));
    return map(frac, [](const Rational& f) { return Rational(1 / f); });
}

std::vector<Program> fixture_programs() {
    std::vector<Program> out;
    out.push_back({"affine", [](const SeqOperator& x) {
                       return map(x, [](const Rational& v) { return Rational(2 * v + 1); });
                   }});
    out.push_back({"prefix_mean", [](const SeqOperator& x) {
                       const auto idx = indices(x.size());
                       const auto m = select(idx, idx, [](const Rational& q, const Rational& k) { return k <= q; });
                       return aggregate(m, x, Rational(0));
                   }});
    out.push_back({"previous", [](const SeqOperator& x) {
                       const auto idx = indices(x.size());
                       const auto m = select(idx, idx, [](const Rational& q, const Rational& k) { return k + 1 == q; });
                       return aggregate(m, x, Rational(0));
                   }});
    out.push_back({"reverse", [](const SeqOperator& x) {
                       const auto idx = indices(x.size());
                       const auto opp = zip(length(x), idx, [](const Rational& n, const Rational& i) {
                           return Rational(n - 1 - i);
                       });
                       const auto m = select(opp, idx, [](const Rational& q, const Rational& k) { return q == k; });
                       return aggregate(m, x, Rational(0));
                   }});
    out.push_back({"centered_square", [](const SeqOperator& x) {
                       const auto idx = indices(x.size());
                       const auto all = select(idx, idx, [](const Rational&, const Rational&) { return true; });
                       const auto mean = aggregate(all, x, Rational(0));
                       return zip(x, mean, [](const Rational& v, const Rational& mu) {
                           return Rational((v - mu) * (v - mu));
                       });
                   }});
    return out;
}

Rational parse_rational(std::string_view text) {
    const auto s = std::string(trim(text));
    if (s.empty()) {
        throw InputError("empty rational");
    }
    auto is_int = [](std::string_view v) {
        if (!v.empty() && (v.front() == '-' || v.front() == '+')) {
            v.remove_prefix(1);
        }
        return !v.empty() && std::all_of(v.begin(), v.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)) != 0; });
    };
    using boost::multiprecision::cpp_int;
    // cpp_int's string constructor reads a leading 0 as octal.
    auto decimal = [](std::string_view v) {
        const bool neg = v.front() == '-';
        if (neg || v.front() == '+') {
            v.remove_prefix(1);
        }
        const auto nz = v.find_first_not_of('0');
        const cpp_int x = nz == std::string_view::npos ? cpp_int(0) : cpp_int(std::string(v.substr(nz)));
        return neg ? cpp_int(-x) : x;
    };
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
        const auto num = s.substr(0, slash);
        const auto den = s.substr(slash + 1);
        if (!is_int(num) || !is_int(den) || den.front() == '-' || den.front() == '+') {
            throw InputError("bad rational '" + s + "'");
        }
        const cpp_int d = decimal(den);
        if (d == 0) {
            throw InputError("zero denominator in '" + s + "'");
        }
        return Rational(decimal(num), d);
    }
    const auto dot = s.find('.');
    if (dot != std::string::npos) {
        const auto whole = s.substr(0, dot);
        const auto frac = s.substr(dot + 1);
        const bool neg = !whole.empty() && whole.front() == '-';
        const auto digits = (neg || (!whole.empty() && whole.front() == '+') ? whole.substr(1) : whole) + frac;
        if (frac.empty() || !is_int(digits) || digits.front() == '-' || digits.front() == '+') {
            throw InputError("bad rational '" + s + "'");
        }
        cpp_int den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) {
            den *= 10;
        }
        Rational r(decimal(digits), den);
        return neg ? Rational(-r) : r;
    }
    if (!is_int(s)) {
        throw InputError("bad rational '" + s + "'");
    }
    return Rational(decimal(s));
}

std::string to_string(const Rational& r) { return r.str(); }

std::string to_string(const SeqOperator& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += to_string(s[i]);
    }
    return out + "]";
}

}  // namespace duallm::rasp
