"""Element-local weak operators defined by duality against the flux space.

One sign convention is used throughout: the discrete weak gradient of a
pair (w, what) is the element of V(K) with

    (G, v)_K = -(w, div v)_K + <what, v.n>_dK     for all v in V(K),

the weak divergence of a pair (E, Ehat.n) is the element of Z(K) with

    (D, s)_K = -(E, grad s)_K + <Ehat.n, s>_dK    for all s in Z(K),

and the lifting of face data mu is the element of V(K) with

    (Phi(mu), v)_K = <mu, v.n>_dK                 for all v in V(K).

All local bases are orthonormal in the physical L2 inner product, so the
defining mass solves are trivial and the operators reduce to the moment
vectors on the right-hand sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fespace
from .errors import CoefficientError
from .fespace import CellBasis, EdgeBasis, LocalSpaceSpec, quadrature


@dataclass(frozen=True)
class SpaceTable:
    """Local spaces of one discretization variant."""
    V: LocalSpaceSpec
    W: LocalSpaceSpec
    M: LocalSpaceSpec
    N: LocalSpaceSpec | None = None
    Z: LocalSpaceSpec | None = None

    def max_degree(self):
        specs = [self.V, self.W, self.M, self.N, self.Z]
        degs = []
        for s in specs:
            if s is None:
                continue
            degs.append(s.degree + (1 if s.kind == fespace.KIND_RT else 0))
        return max(degs)


def default_quad_order(table):
    return min(2 * table.max_degree() + 3, fespace.MAX_QUAD_ORDER)


@dataclass
class BrokenField:
    """Per-element coefficient block in an element-local space."""
    spec: LocalSpaceSpec
    data: np.ndarray  # (n_elements, spec.dim)


@dataclass
class SkeletonFunction:
    """Per-face coefficient block in a face space.

    Scalar traces are single valued.  Normal-flux functions store the
    flux with respect to the face's canonical normal; the value seen
    from an element is sign * stored.
    """
    spec: LocalSpaceSpec
    data: np.ndarray  # (n_faces, spec.dim)
    constraint: str = "free"   # free | zero_boundary | projected_dirichlet
    normal_flux: bool = False


@dataclass
class WeakPair:
    """An interior scalar field together with its face trace."""
    interior: BrokenField
    trace: SkeletonFunction


class _Side:
    """Tables for one local face of one element."""

    __slots__ = ("fid", "sign", "normal", "xq", "wq", "Psi", "Chi",
                 "Wf", "Wgn", "Vn", "Zf", "TVn", "TW", "WWF", "VWn",
                 "NVn", "NgW", "ZN", "TZ")


class _Cell:
    """Volume tables for one element."""

    __slots__ = ("h", "area", "xq", "wq", "bases", "Wv", "Wg", "Vv", "Vd",
                 "Zv", "DIV", "GRD", "GZV", "sides")


class Discretization:
    """Per-element quadrature, orthonormal bases, and operator tables."""

    def __init__(self, mesh, table, quad_order=None):
        self.mesh = mesh
        self.table = table
        self.quad_order = quad_order if quad_order is not None else default_quad_order(table)
        self._face_basis_M = {}
        self._face_basis_N = {}
        vol_rule = quadrature("triangle", self.quad_order)
        edge_rule = quadrature("edge", self.quad_order)
        self._edge_t = edge_rule.points
        self._edge_w = edge_rule.weights
        self.cells = [self._build_cell(k, vol_rule) for k in range(mesh.num_elements)]

    # -- construction ------------------------------------------------------

    def face_basis(self, fid, space="M"):
        cache = self._face_basis_M if space == "M" else self._face_basis_N
        if fid not in cache:
            spec = self.table.M if space == "M" else self.table.N
            cache[fid] = EdgeBasis(spec.degree, self.mesh.face_length(fid))
        return cache[fid]

    def _build_cell(self, k, vol_rule):
        mesh, table = self.mesh, self.table
        verts = mesh.element_vertices(k)
        cell = _Cell()
        cell.h = float(mesh.h[k])
        jac = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
        cell.area = 0.5 * abs(np.linalg.det(jac))
        cell.xq = vol_rule.points @ jac.T + verts[0]
        cell.wq = vol_rule.weights * (2.0 * cell.area)

        bases = {}
        for spec in (table.V, table.W, table.Z):
            if spec is not None and spec not in bases:
                bases[spec] = CellBasis(spec, verts)
        cell.bases = bases

        wb = bases[table.W]
        vb = bases[table.V]
        cell.Wv = wb.eval(cell.xq)
        cell.Wg = wb.grad(cell.xq)
        cell.Vv = vb.eval(cell.xq)
        cell.Vd = vb.div(cell.xq)
        cell.DIV = np.einsum("iq,jq,q->ij", cell.Vd, cell.Wv, cell.wq)
        cell.GRD = np.einsum("iqd,jqd,q->ij", cell.Vv, cell.Wg, cell.wq)
        if table.Z is not None:
            zb = bases[table.Z]
            cell.Zv = zb.eval(cell.xq)
            zg = zb.grad(cell.xq)
            # GZV[i, j] = (v_j, grad z_i)
            cell.GZV = np.einsum("iqd,jqd,q->ij", zg, cell.Vv, cell.wq)
        else:
            cell.Zv = None
            cell.GZV = None

        cell.sides = []
        for loc in range(3):
            fid, sign = mesh.face_of_element[k, loc]
            side = _Side()
            side.fid, side.sign = int(fid), int(sign)
            a, b = mesh.faces[fid]
            p0, p1 = mesh.vertices[a], mesh.vertices[b]
            length = float(np.linalg.norm(p1 - p0))
            side.normal = side.sign * mesh.face_normal(fid)
            side.xq = p0[None, :] + self._edge_t[:, None] * (p1 - p0)[None, :]
            side.wq = self._edge_w * length

            side.Psi = self.face_basis(fid, "M").eval(self._edge_t)
            side.Chi = self.face_basis(fid, "N").eval(self._edge_t) if table.N else None

            side.Wf = wb.eval(side.xq)
            wgf = wb.grad(side.xq)
            side.Wgn = np.einsum("jqd,d->jq", wgf, side.normal)
            vf = vb.eval(side.xq)
            side.Vn = np.einsum("iqd,d->iq", vf, side.normal)
            side.Zf = bases[table.Z].eval(side.xq) if table.Z is not None else None

            side.TVn = np.einsum("mq,iq,q->mi", side.Psi, side.Vn, side.wq)
            side.TW = np.einsum("mq,jq,q->mj", side.Psi, side.Wf, side.wq)
            side.WWF = np.einsum("iq,jq,q->ij", side.Wf, side.Wf, side.wq)
            side.VWn = np.einsum("iq,jq,q->ij", side.Vn, side.Wf, side.wq)
            if table.N is not None:
                side.NVn = np.einsum("mq,iq,q->mi", side.Chi, side.Vn, side.wq)
                side.NgW = np.einsum("mq,jq,q->mj", side.Chi, side.Wgn, side.wq)
            else:
                side.NVn = side.NgW = None
            if table.Z is not None:
                side.ZN = (np.einsum("iq,mq,q->im", side.Zf, side.Chi, side.wq)
                           if table.N is not None else None)
                side.TZ = np.einsum("mq,iq,q->mi", side.Psi, side.Zf, side.wq)
            else:
                side.ZN = side.TZ = None
            cell.sides.append(side)
        return cell

    # -- dimensions and layout helpers --------------------------------------

    @property
    def nV(self):
        return self.table.V.dim

    @property
    def nW(self):
        return self.table.W.dim

    @property
    def nM(self):
        return self.table.M.dim

    @property
    def nN(self):
        return self.table.N.dim if self.table.N else 0

    @property
    def nZ(self):
        return self.table.Z.dim if self.table.Z else 0

    # -- operator matrices ---------------------------------------------------

    def gmat(self, k):
        """Weak-gradient matrix: columns (w | what_face0 | what_face1 | what_face2)."""
        cell = self.cells[k]
        cols = [-cell.DIV] + [s.TVn.T for s in cell.sides]
        return np.hstack(cols)

    def dmat(self, k):
        """Weak-divergence matrix: columns (E | flux.n_out per face in N basis)."""
        cell = self.cells[k]
        cols = [-cell.GZV] + [s.ZN for s in cell.sides]
        return np.hstack(cols)

    def phi_mat(self, k, loc):
        """Lifting matrix of one face: (nV, dim M), data in the face M basis."""
        return self.cells[k].sides[loc].TVn.T

    def coeff_matrix(self, k, coeff_at):
        """(A v_j, v_i)_K for a matrix-valued coefficient evaluator."""
        cell = self.cells[k]
        aq = coeff_at(cell.xq)
        return np.einsum("iqd,qde,jqe,q->ij", cell.Vv, aq, cell.Vv, cell.wq)

    def interior_moments(self, k, fn, spec="W"):
        """(f, basis_j)_K moments of a callable."""
        cell = self.cells[k]
        fv = np.asarray(fn(cell.xq[:, 0], cell.xq[:, 1]), dtype=float)
        vals = cell.Wv if spec == "W" else cell.Zv
        return vals @ (cell.wq * fv)

    # -- projections of callables -------------------------------------------

    def project_interior(self, fn, spec="W"):
        """Elementwise L2 projection of a scalar callable; (nelem, dim)."""
        out = np.zeros((self.mesh.num_elements, self.nW if spec == "W" else self.nZ))
        for k in range(self.mesh.num_elements):
            out[k] = self.interior_moments(k, fn, spec)
        return out

    def project_vector(self, fn):
        """Elementwise L2 projection of a vector callable onto V; (nelem, nV)."""
        out = np.zeros((self.mesh.num_elements, self.nV))
        for k in range(self.mesh.num_elements):
            cell = self.cells[k]
            fv = np.asarray(fn(cell.xq[:, 0], cell.xq[:, 1]), dtype=float)
            out[k] = np.einsum("iqd,qd,q->i", cell.Vv, fv, cell.wq)
        return out

    def project_faces(self, fn, space="M"):
        """Facewise L2 projection of a scalar callable; (nfaces, dim).

        For normal-flux data the callable must give the flux against the
        canonical face normal.
        """
        mesh = self.mesh
        dim = self.nM if space == "M" else self.nN
        out = np.zeros((mesh.num_faces, dim))
        for f in range(mesh.num_faces):
            a, b = mesh.faces[f]
            p0, p1 = mesh.vertices[a], mesh.vertices[b]
            pts = p0[None, :] + self._edge_t[:, None] * (p1 - p0)[None, :]
            wq = self._edge_w * mesh.face_length(f)
            fv = np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)
            out[f] = self.face_basis(f, space).eval(self._edge_t) @ (wq * fv)
        return out

    # -- field evaluation -----------------------------------------------------

    def eval_interior(self, k, coeffs, spec="W"):
        """Values of an interior scalar field at the element quad points."""
        cell = self.cells[k]
        return coeffs @ (cell.Wv if spec == "W" else cell.Zv)

    def eval_vector(self, k, coeffs):
        cell = self.cells[k]
        return np.einsum("i,iqd->qd", coeffs, cell.Vv)


# ---------------------------------------------------------------------------
# public element-local operations


def weak_gradient(disc, element, w, what):
    """Discrete weak gradient of (w, what) on one element.

    w: (nW,) interior coefficients; what: (3, dim M) single-valued trace
    coefficients per local face.  Returns the V(K) coefficient vector.
    """
    g = disc.gmat(element)
    return g @ np.concatenate([np.asarray(w, dtype=float),
                               np.asarray(what, dtype=float).ravel()])


def weak_flux(disc, element, gradient, coefficient, mode):
    """Flux from a weak gradient: mode "Fc" solves (c Q, v) = -(G, v);
    mode "Fa" projects Q = -P_V(a G)."""
    cell = disc.cells[element]
    pts = cell.xq
    if mode == "Fa":
        avals = coefficient.a_at(pts)
        _check_spd(avals)
        ma = disc.coeff_matrix(element, coefficient.a_at)
        return -(ma @ gradient)
    if mode == "Fc":
        cvals = coefficient.c_at(pts)
        _check_spd(cvals)
        mc = disc.coeff_matrix(element, coefficient.c_at)
        return np.linalg.solve(mc, -np.asarray(gradient, dtype=float))
    raise ValueError(f"unknown flux mode {mode!r}")


def _check_spd(vals):
    sym = np.abs(vals[:, 0, 1] - vals[:, 1, 0]).max() if len(vals) else 0.0
    if sym > 1e-12:
        raise CoefficientError("coefficient is not symmetric at quadrature points")
    det = vals[:, 0, 0] * vals[:, 1, 1] - vals[:, 0, 1] * vals[:, 1, 0]
    if len(vals) and (vals[:, 0, 0].min() <= 0.0 or det.min() <= 0.0):
        raise CoefficientError("coefficient is not positive definite at quadrature points")


def weak_divergence(disc, element, field, flux_out):
    """Discrete weak divergence of (E, Ehat.n) on one element.

    field: (nV,) coefficients; flux_out: (3, dim N) coefficients of the
    outward normal flux per local face.  Returns Z(K) coefficients.
    """
    d = disc.dmat(element)
    return d @ np.concatenate([np.asarray(field, dtype=float),
                               np.asarray(flux_out, dtype=float).ravel()])


def lifting_phi(disc, element, mu):
    """Lifting of face data mu (3, dim M) into V(K)."""
    cell = disc.cells[element]
    mu = np.asarray(mu, dtype=float)
    out = np.zeros(disc.nV)
    for loc, side in enumerate(cell.sides):
        out += side.TVn.T @ mu[loc]
    return out


def lifting_phi_values(disc, element, values_per_face):
    """Lifting of raw face values (list of arrays at the face quad points)."""
    cell = disc.cells[element]
    out = np.zeros(disc.nV)
    for side, vals in zip(cell.sides, values_per_face):
        out += np.einsum("iq,q,q->i", side.Vn, np.asarray(vals, dtype=float), side.wq)
    return out


def local_trace(disc, element, skeleton):
    """Coefficients of a SkeletonFunction on the three faces of an element.

    Scalar traces are returned as stored; normal-flux data is flipped to
    the element's outward orientation.
    """
    cell = disc.cells[element]
    out = np.zeros((3, skeleton.data.shape[1]))
    for loc, side in enumerate(cell.sides):
        val = skeleton.data[side.fid]
        out[loc] = side.sign * val if skeleton.normal_flux else val
    return out
