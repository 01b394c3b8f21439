"""Local polynomial spaces, quadrature, and L2 projections.

Element spaces are spanned by monomials in scaled, centered coordinates
sigma = (x - x_c)/h and orthonormalized per element against the physical
L2 inner product, so every local mass matrix is the identity.  The
scaled shift keeps the flux space [P_k]^2 + x*P_k intact (only scalar
rescalings of x preserve it).  Face spaces use shifted Legendre
polynomials along the canonical face parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.linalg import cholesky, solve_triangular
from scipy.special import roots_jacobi, roots_legendre

from .errors import UnsupportedDegreeError, UnsupportedOrderError

MAX_DEGREE = 4
MAX_QUAD_ORDER = 10

KIND_TRI = "scalar_triangle"
KIND_EDGE = "scalar_edge"
KIND_VEC = "vector_pk"
KIND_RT = "raviart_thomas"


@dataclass(frozen=True)
class LocalSpaceSpec:
    kind: str
    degree: int

    def __post_init__(self):
        if self.degree < 0 or self.degree > MAX_DEGREE:
            raise UnsupportedDegreeError(
                f"degree {self.degree} outside supported range 0..{MAX_DEGREE}")

    @property
    def dim(self):
        k = self.degree
        if self.kind == KIND_TRI:
            return (k + 1) * (k + 2) // 2
        if self.kind == KIND_EDGE:
            return k + 1
        if self.kind == KIND_VEC:
            return (k + 1) * (k + 2)
        if self.kind == KIND_RT:
            return (k + 1) * (k + 2) + (k + 1)
        raise ValueError(f"unknown space kind {self.kind!r}")

    @property
    def is_vector(self):
        return self.kind in (KIND_VEC, KIND_RT)


def scalar_tri(k):
    return LocalSpaceSpec(KIND_TRI, k)


def scalar_edge(k):
    return LocalSpaceSpec(KIND_EDGE, k)


def vector_pk(k):
    return LocalSpaceSpec(KIND_VEC, k)


def raviart_thomas(k):
    return LocalSpaceSpec(KIND_RT, k)


# ---------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray   # (n, 2) on the reference triangle or (n,) on [0, 1]
    weights: np.ndarray  # positive, summing to the reference measure


@lru_cache(maxsize=None)
def quadrature(shape, order):
    """Rule exact for polynomials up to `order` on the unit triangle or edge."""
    if order < 0:
        raise UnsupportedOrderError("order must be nonnegative")
    if order > MAX_QUAD_ORDER:
        raise UnsupportedOrderError(f"order {order} exceeds cap {MAX_QUAD_ORDER}")
    m = max(1, (order + 2) // 2)
    if shape == "edge":
        t, w = roots_legendre(m)
        return QuadRule(points=0.5 * (t + 1.0), weights=0.5 * w)
    if shape == "triangle":
        # Collapsed product rule: x = (1-eta)*xi, y = eta, Jacobian (1-eta)
        # absorbed as Gauss-Jacobi(1,0) weight in eta.
        xi, wxi = roots_legendre(m)
        xi = 0.5 * (xi + 1.0)
        wxi = 0.5 * wxi
        t, wt = roots_jacobi(m, 1.0, 0.0)
        eta = 0.5 * (t + 1.0)
        weta = 0.25 * wt
        pts = np.array([[(1.0 - e) * x, e] for e in eta for x in xi])
        wts = np.array([we * wx for we in weta for wx in wxi])
        return QuadRule(points=pts, weights=wts)
    raise ValueError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# raw (monomial) bases

def monomial_exponents(k):
    """Graded ordering of the 2D monomials x^a y^b with a+b <= k."""
    return [(d - j, j) for d in range(k + 1) for j in range(d + 1)]


def _eval_monomials(k, pts):
    """Values and gradients of the 2D monomial basis at pts (n, 2)."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    exps = monomial_exponents(k)
    vals = np.empty((len(exps), len(x)))
    grads = np.empty((len(exps), len(x), 2))
    for i, (a, b) in enumerate(exps):
        vals[i] = x ** a * y ** b
        grads[i, :, 0] = a * x ** (a - 1) * y ** b if a > 0 else 0.0
        grads[i, :, 1] = b * x ** a * y ** (b - 1) if b > 0 else 0.0
    return vals, grads


def _eval_raw(spec, pts):
    """Raw spanning set of `spec` at 2D points: (vals, grads_or_divs).

    Scalar: vals (n_i, n_q), grads (n_i, n_q, 2).
    Vector: vals (n_i, n_q, 2), divs (n_i, n_q).
    """
    k = spec.degree
    if spec.kind in (KIND_TRI, KIND_EDGE):
        if spec.kind == KIND_EDGE:
            t = np.asarray(pts, dtype=float)
            vals = np.array([t ** m for m in range(k + 1)])
            return vals, None
        return _eval_monomials(k, pts)

    sval, sgrad = _eval_monomials(k, pts)
    npk, nq = sval.shape
    if spec.kind == KIND_VEC:
        vals = np.zeros((2 * npk, nq, 2))
        divs = np.zeros((2 * npk, nq))
        vals[:npk, :, 0] = sval
        vals[npk:, :, 1] = sval
        divs[:npk] = sgrad[:, :, 0]
        divs[npk:] = sgrad[:, :, 1]
        return vals, divs
    if spec.kind == KIND_RT:
        # [P_k]^2 plus the tail x*m for homogeneous monomials m of degree k
        homo = slice(npk - (k + 1), npk)
        hval, hgrad = sval[homo], sgrad[homo]
        pts = np.asarray(pts, dtype=float)
        vals = np.zeros((2 * npk + k + 1, nq, 2))
        divs = np.zeros((2 * npk + k + 1, nq))
        vals[:npk, :, 0] = sval
        vals[npk:2 * npk, :, 1] = sval
        divs[:npk] = sgrad[:, :, 0]
        divs[npk:2 * npk] = sgrad[:, :, 1]
        vals[2 * npk:, :, 0] = hval * pts[:, 0]
        vals[2 * npk:, :, 1] = hval * pts[:, 1]
        divs[2 * npk:] = (2.0 * hval + hgrad[:, :, 0] * pts[:, 0]
                          + hgrad[:, :, 1] * pts[:, 1])
        return vals, divs
    raise ValueError(f"unknown space kind {spec.kind!r}")


def eval_basis(spec, points):
    """Spanning set of `spec` evaluated at reference coordinates.

    Returns (n_basis, n_points) for scalar kinds and (n_basis, n_points, 2)
    for vector kinds.  Functions are plain monomial combinations (the
    constant comes first); orthonormalization happens per element.
    """
    vals, _ = _eval_raw(spec, points)
    return vals


# ---------------------------------------------------------------------------
# per-element / per-face orthonormal bases

class CellBasis:
    """Orthonormal basis of a local space on one physical triangle.

    Functions are polynomials of sigma = (x - center)/scale, combined so
    that the physical L2 Gram matrix is the identity.
    """

    def __init__(self, spec, verts, quad_order=None):
        self.spec = spec
        verts = np.asarray(verts, dtype=float)
        self.center = verts.mean(axis=0)
        edges = verts[[1, 2, 0]] - verts[[0, 1, 2]]
        self.scale = float(np.linalg.norm(edges, axis=1).max())
        self.area = abs(_tri_area(verts))
        poly_deg = spec.degree + (1 if spec.kind == KIND_RT else 0)
        order = quad_order if quad_order is not None else min(2 * poly_deg + 2, MAX_QUAD_ORDER)
        rule = quadrature("triangle", order)
        pts = rule.points @ np.column_stack([verts[1] - verts[0],
                                             verts[2] - verts[0]]).T + verts[0]
        wts = rule.weights * (2.0 * self.area)
        raw, _ = _eval_raw(spec, self._to_sigma(pts))
        if spec.is_vector:
            gram = np.einsum("iqd,jqd,q->ij", raw, raw, wts)
        else:
            gram = np.einsum("iq,jq,q->ij", raw, raw, wts)
        lo = cholesky(gram, lower=True)
        # transform[i, :] expresses orthonormal function i in the raw set;
        # lower-triangular, so degree grading is preserved.
        self.transform = solve_triangular(lo, np.eye(gram.shape[0]), lower=True)

    def _to_sigma(self, pts):
        return (np.asarray(pts, dtype=float) - self.center) / self.scale

    @property
    def dim(self):
        return self.spec.dim

    def eval(self, pts):
        raw, _ = _eval_raw(self.spec, self._to_sigma(pts))
        return np.tensordot(self.transform, raw, axes=(1, 0))

    def grad(self, pts):
        if self.spec.is_vector:
            raise ValueError("grad is defined for scalar spaces")
        _, raw_grad = _eval_raw(self.spec, self._to_sigma(pts))
        return np.tensordot(self.transform, raw_grad, axes=(1, 0)) / self.scale

    def div(self, pts):
        if not self.spec.is_vector:
            raise ValueError("div is defined for vector spaces")
        _, raw_div = _eval_raw(self.spec, self._to_sigma(pts))
        return np.tensordot(self.transform, raw_div, axes=(1, 0)) / self.scale


def _tri_area(verts):
    d1 = verts[1] - verts[0]
    d2 = verts[2] - verts[0]
    return 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])


class EdgeBasis:
    """Orthonormal basis of P_k on one physical segment.

    psi_m(t) = sqrt(2m+1) * Legendre_m(2t - 1) / sqrt(length), with t the
    canonical arc-length parameter from the low-index endpoint.
    """

    def __init__(self, degree, length):
        if degree < 0 or degree > MAX_DEGREE:
            raise UnsupportedDegreeError(f"edge degree {degree} outside 0..{MAX_DEGREE}")
        self.degree = degree
        self.length = float(length)

    @property
    def dim(self):
        return self.degree + 1

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty((self.dim, t.size))
        for m in range(self.dim):
            coef = np.zeros(m + 1)
            coef[m] = 1.0
            out[m] = np.sqrt(2 * m + 1) * npleg.legval(2.0 * t - 1.0, coef)
        return out / np.sqrt(self.length)


def project_cell(basis, fn, verts, quad_order):
    """L2-project a callable onto a CellBasis; returns ONB coefficients."""
    rule = quadrature("triangle", quad_order)
    verts = np.asarray(verts, dtype=float)
    jac = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
    pts = rule.points @ jac.T + verts[0]
    wts = rule.weights * (2.0 * abs(_tri_area(verts)))
    fv = np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)
    vals = basis.eval(pts)
    if basis.spec.is_vector:
        return np.einsum("iqd,qd,q->i", vals, fv, wts)
    return np.einsum("iq,q,q->i", vals, fv, wts)


def project_edge(basis, fn, endpoints, quad_order):
    """L2-project a callable onto an EdgeBasis; returns ONB coefficients."""
    rule = quadrature("edge", quad_order)
    p0, p1 = np.asarray(endpoints, dtype=float)
    pts = p0[None, :] + rule.points[:, None] * (p1 - p0)[None, :]
    wts = rule.weights * basis.length
    fv = np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)
    return np.einsum("iq,q,q->i", basis.eval(rule.points), fv, wts)


def l2_project(spec, geometry, fn, quad_order=None):
    """Project a callable field onto a local space over an element or edge.

    geometry: triangle vertices (3, 2) for cell spaces, endpoints (2, 2)
    for edge spaces.  Returns (coefficients, basis).
    """
    if quad_order is None:
        quad_order = min(2 * spec.degree + 2, MAX_QUAD_ORDER)
    if spec.kind == KIND_EDGE:
        p = np.asarray(geometry, dtype=float)
        basis = EdgeBasis(spec.degree, np.linalg.norm(p[1] - p[0]))
        return project_edge(basis, fn, p, quad_order), basis
    basis = CellBasis(spec, geometry)
    return project_cell(basis, fn, geometry, quad_order), basis
