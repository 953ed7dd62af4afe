"""Multivariate polynomials as coefficient/exponent term lists.

Used to define custom scenarios from plain config data: a polynomial in n
variables is a list of terms ``(coeff, (e1, ..., en))``.  Differentiation is
exact coefficient arithmetic, so config-defined certificates get analytic
gradients for free.
"""

import numpy as np


class Polynomial:
    def __init__(self, n_vars, terms):
        self.n_vars = int(n_vars)
        clean = []
        for coeff, expo in terms:
            expo = tuple(int(e) for e in expo)
            if len(expo) != self.n_vars:
                raise ValueError(
                    f"term exponents {expo} do not match n_vars={self.n_vars}"
                )
            if any(e < 0 for e in expo):
                raise ValueError(f"negative exponent in {expo}")
            if coeff != 0.0:
                clean.append((float(coeff), expo))
        self.terms = clean

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        total = 0.0
        for coeff, expo in self.terms:
            term = coeff
            for xi, ei in zip(x, expo):
                if ei:
                    term *= xi**ei
            total += term
        return total

    def diff(self, i):
        """Exact partial derivative with respect to variable i."""
        terms = []
        for coeff, expo in self.terms:
            if expo[i] == 0:
                continue
            new = list(expo)
            new[i] -= 1
            terms.append((coeff * expo[i], tuple(new)))
        return Polynomial(self.n_vars, terms)

    def gradient_polys(self):
        return [self.diff(i) for i in range(self.n_vars)]


def poly_from_table(n_vars, table):
    """Build a Polynomial from config data: a list of [coeff, e1, ..., en] rows."""
    terms = []
    for row in table:
        if len(row) != n_vars + 1:
            raise ValueError(
                f"polynomial row {row!r} must have 1 coefficient + {n_vars} exponents"
            )
        terms.append((float(row[0]), tuple(row[1:])))
    return Polynomial(n_vars, terms)


def vector_field_from_tables(n_vars, tables):
    """List of per-component term tables -> callable state -> vector."""
    polys = [poly_from_table(n_vars, t) for t in tables]

    def field(x):
        return np.array([p(x) for p in polys])

    return field, polys


def matrix_field_from_tables(n_vars, tables):
    """Nested per-entry term tables (rows of columns) -> callable state -> matrix.

    Scalar entries are accepted as shorthand for constant polynomials.
    """
    rows = []
    for row in tables:
        cols = []
        for entry in row:
            if isinstance(entry, (int, float)):
                cols.append(Polynomial(n_vars, [(float(entry), (0,) * n_vars)]))
            else:
                cols.append(poly_from_table(n_vars, entry))
        rows.append(cols)
    n_out = len(rows)
    m = len(rows[0])
    if any(len(r) != m for r in rows):
        raise ValueError("matrix polynomial table rows have unequal lengths")

    def field(x):
        out = np.empty((n_out, m))
        for i, row_polys in enumerate(rows):
            for j, p in enumerate(row_polys):
                out[i, j] = p(x)
        return out

    return field


def scalar_with_gradient(poly):
    """Polynomial -> (value callable, gradient callable) with exact gradients."""
    grads = poly.gradient_polys()

    def value(x):
        return poly(x)

    def gradient(x):
        return np.array([g(x) for g in grads])

    return value, gradient
