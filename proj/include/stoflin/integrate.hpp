#pragma once

#include "stoflin/expr.hpp"

namespace stoflin {

struct NonIntegrable : std::runtime_error {
    explicit NonIntegrable(const std::string& what) : std::runtime_error(what) {}
};

/// Table antiderivative with respect to x<var>. Covers sums of terms
/// c(x_other) * core where core is a rational power of an affine argument,
/// sin/cos/tan/sec/exp of an affine argument, or 1/cos. sec integrates to the
/// log form ln(cos(u/2)+sin(u/2)) - ln(cos(u/2)-sin(u/2)).
/// Throws NonIntegrable on a table miss.
Expr integrate_table(const Expr& e, int var);

}  // namespace stoflin
