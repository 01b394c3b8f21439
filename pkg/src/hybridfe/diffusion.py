"""Steady diffusion: hybridized assemblies and their condensed rewritings.

Three assembly routes produce the same discrete solutions:

* assemble_hdg        -- four-field elementwise systems (gradient, flux,
                         primal value) condensed onto the face trace.
* assemble_wg_condensed -- the (value, trace) system built from weak
                         gradients, optionally Schur-reduced to the trace.
* assemble_wg_flux_form -- the (flux, value, flux-trace) system whose
                         trace unknown is the normal flux.

Skeleton rows are oriented so that the condensed trace matrix agrees
entrywise with the Schur complement of the weak-form system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import weakops
from .errors import CoefficientError, ConfigError
from .fespace import raviart_thomas, scalar_edge, scalar_tri, vector_pk
from .linalg import SolveReport, SparseSystem, solve_direct
from .weakops import Discretization, SpaceTable

VARIANTS = ("HDG_Fc", "HDG_Fa", "Mixed_BDM_Ex51", "Mixed_RT_Ex52",
            "WG2014_FluxForm", "WG2015_Polytopal", "WG2015_LS")

STAB_ZERO = "Zero"
STAB_SCALAR = "ScalarOverH"
STAB_LS = "LSProjection"


# ---------------------------------------------------------------------------
# coefficient field

class Coefficient:
    """Symmetric positive-definite diffusion tensor.

    Built from either member of the pair (c, a) with a = c^-1; the other
    member is formed by pointwise inversion.  Accepts scalar callables,
    constant 2x2 arrays, or callables returning (n, 2, 2) stacks.
    """

    def __init__(self, fn, given="c"):
        if given not in ("c", "a"):
            raise ConfigError("coefficient must be given as 'c' or 'a'")
        self._fn = fn
        self._given = given

    @classmethod
    def unit(cls):
        return cls(1.0, given="c")

    @classmethod
    def from_c(cls, fn):
        return cls(fn, given="c")

    @classmethod
    def from_a(cls, fn):
        return cls(fn, given="a")

    def _tensor(self, pts):
        pts = np.asarray(pts, dtype=float)
        n = pts.shape[0]
        fn = self._fn
        vals = fn(pts[:, 0], pts[:, 1]) if callable(fn) else fn
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 0:
            out = np.tile(float(vals) * np.eye(2), (n, 1, 1))
        elif vals.shape == (n,):
            out = vals[:, None, None] * np.eye(2)
        elif vals.shape == (2, 2):
            out = np.tile(vals, (n, 1, 1))
        elif vals.shape == (n, 2, 2):
            out = vals
        else:
            raise CoefficientError(f"cannot interpret coefficient values of shape {vals.shape}")
        self._validate(out)
        return out

    @staticmethod
    def _validate(t):
        if np.abs(t[:, 0, 1] - t[:, 1, 0]).max(initial=0.0) > 1e-12:
            raise CoefficientError("coefficient not symmetric at sample points")
        det = t[:, 0, 0] * t[:, 1, 1] - t[:, 0, 1] * t[:, 1, 0]
        if t.shape[0] and (t[:, 0, 0].min() <= 0.0 or det.min() <= 0.0):
            raise CoefficientError("coefficient not positive definite at sample points")

    @staticmethod
    def _invert(t):
        det = t[:, 0, 0] * t[:, 1, 1] - t[:, 0, 1] * t[:, 1, 0]
        inv = np.empty_like(t)
        inv[:, 0, 0] = t[:, 1, 1] / det
        inv[:, 1, 1] = t[:, 0, 0] / det
        inv[:, 0, 1] = -t[:, 0, 1] / det
        inv[:, 1, 0] = -t[:, 1, 0] / det
        return inv

    def c_at(self, pts):
        t = self._tensor(pts)
        return t if self._given == "c" else self._invert(t)

    def a_at(self, pts):
        t = self._tensor(pts)
        return t if self._given == "a" else self._invert(t)


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class Stabilization:
    kind: str
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in (STAB_ZERO, STAB_SCALAR, STAB_LS):
            raise ConfigError(f"unknown stabilization kind {self.kind!r}")
        if self.kind != STAB_ZERO and self.rho <= 0.0:
            raise ConfigError("stabilization weight rho must be positive")


_FORCED_STAB = {
    "Mixed_BDM_Ex51": STAB_ZERO,
    "Mixed_RT_Ex52": STAB_ZERO,
    "WG2014_FluxForm": STAB_LS,
    "WG2015_Polytopal": STAB_SCALAR,
    "WG2015_LS": STAB_LS,
}


def _variant_table(variant, k, stab_kind):
    if variant == "Mixed_BDM_Ex51":
        if k < 1:
            raise ConfigError("Mixed_BDM_Ex51 needs k >= 1")
        return SpaceTable(V=vector_pk(k), W=scalar_tri(k - 1), M=scalar_edge(k))
    if variant == "Mixed_RT_Ex52":
        return SpaceTable(V=raviart_thomas(k), W=scalar_tri(k), M=scalar_edge(k))
    if variant == "WG2014_FluxForm":
        return SpaceTable(V=vector_pk(k), W=scalar_tri(k + 1), M=scalar_edge(k),
                          N=scalar_edge(k))
    if variant == "WG2015_Polytopal":
        return SpaceTable(V=vector_pk(k), W=scalar_tri(k + 1), M=scalar_edge(k + 1))
    if variant == "WG2015_LS":
        return SpaceTable(V=vector_pk(k), W=scalar_tri(k + 1), M=scalar_edge(k))
    if variant in ("HDG_Fc", "HDG_Fa"):
        mdeg = k + 1 if stab_kind == STAB_SCALAR else k
        return SpaceTable(V=vector_pk(k), W=scalar_tri(k + 1), M=scalar_edge(mdeg))
    raise ConfigError(f"unknown variant {variant!r}")


@dataclass
class DiffusionConfig:
    variant: str
    k: int
    stabilization: Stabilization | None = None
    coefficient: Coefficient = field(default_factory=Coefficient.unit)
    spaces: SpaceTable | None = None
    quad_order: int | None = None

    def resolve(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.k < 0:
            raise ConfigError("degree k must be nonnegative")
        forced = _FORCED_STAB.get(self.variant)
        stab = self.stabilization
        if forced is not None:
            if stab is None:
                stab = Stabilization(forced)
            elif stab.kind != forced:
                if forced == STAB_ZERO:
                    raise ConfigError("mixed variants require zero stabilization")
                raise ConfigError(f"{self.variant} requires {forced} stabilization")
        elif stab is None:
            stab = Stabilization(STAB_LS if self.variant == "HDG_Fc" else STAB_SCALAR)
        try:
            table = _variant_table(self.variant, self.k, stab.kind)
        except ConfigError:
            raise
        if self.spaces is not None:
            if self.variant not in ("HDG_Fc", "HDG_Fa"):
                if self.spaces != table:
                    raise ConfigError("space table violation: "
                                      f"{self.variant} fixes its local spaces")
            else:
                table = self.spaces
        if self.variant == "WG2014_FluxForm" and table.M.degree < table.V.degree:
            raise ConfigError("flux-form rewriting needs V(K).n traces inside M(F)")
        return _Resolved(variant=self.variant, k=self.k, stab=stab, table=table,
                         coefficient=self.coefficient, quad_order=self.quad_order)


@dataclass(frozen=True)
class _Resolved:
    variant: str
    k: int
    stab: Stabilization
    table: SpaceTable
    coefficient: Coefficient
    quad_order: int | None


def hdg_twin(config):
    """The HDG configuration whose condensation the given WG variant rewrites."""
    res = config.resolve()
    twin_of = {
        "Mixed_BDM_Ex51": "HDG_Fa",
        "Mixed_RT_Ex52": "HDG_Fa",
        "WG2015_Polytopal": "HDG_Fa",
        "WG2015_LS": "HDG_Fa",
        "WG2014_FluxForm": "HDG_Fc",
    }
    if config.variant not in twin_of:
        raise ConfigError(f"{config.variant} has no HDG twin")
    table = SpaceTable(V=res.table.V, W=res.table.W, M=res.table.M)
    return DiffusionConfig(variant=twin_of[config.variant], k=config.k,
                           stabilization=res.stab, coefficient=config.coefficient,
                           spaces=table, quad_order=config.quad_order)


def build_discretization(mesh, config):
    res = config.resolve() if isinstance(config, DiffusionConfig) else config
    return Discretization(mesh, res.table, res.quad_order)


# ---------------------------------------------------------------------------
# DOF layouts

class FaceDofLayout:
    """Global numbering of free face DOFs; fixed faces map to -1."""

    def __init__(self, mesh, dim, fixed_faces):
        self.dim = dim
        self.fixed_mask = np.zeros(mesh.num_faces, dtype=bool)
        self.fixed_mask[np.asarray(fixed_faces, dtype=int)] = True
        self.index = -np.ones((mesh.num_faces, dim), dtype=np.int64)
        count = 0
        for f in range(mesh.num_faces):
            if not self.fixed_mask[f]:
                self.index[f] = np.arange(count, count + dim)
                count += dim
        self.n_free = count

    def gids(self, fid):
        return self.index[fid]

    def expand(self, free_values, fixed_table):
        """Full (nface, dim) table from free values plus fixed entries."""
        out = fixed_table.copy()
        mask = ~self.fixed_mask
        out[mask] = free_values.reshape(-1, self.dim)
        return out


# ---------------------------------------------------------------------------
# solution container

@dataclass
class DiffusionSolution:
    u: np.ndarray        # (nelem, nW)
    q: np.ndarray        # (nelem, nV)
    g: np.ndarray        # (nelem, nV)
    uhat: np.ndarray     # (nface, nM)
    qhat_n: np.ndarray   # (nface, nM), canonical orientation
    report: SolveReport | None = None

    def dof_map(self):
        return {"u": self.u.ravel(), "q": self.q.ravel(), "g": self.g.ravel(),
                "uhat": self.uhat.ravel(), "qhat_n": self.qhat_n.ravel()}


def _tau_value(stab, h):
    return 0.0 if stab.kind == STAB_ZERO else stab.rho / h


def _penalty_uu(stab, side):
    """<tau u, w>_F matrix on the W block (full trace or projected)."""
    if stab.kind == STAB_LS:
        return side.TW.T @ side.TW
    return side.WWF


def _dirichlet_values(disc, u_dirichlet):
    vals = np.zeros((disc.mesh.num_faces, disc.nM))
    if u_dirichlet is None:
        return vals
    proj = disc.project_faces(u_dirichlet, "M")
    vals[disc.mesh.boundary_faces] = proj[disc.mesh.boundary_faces]
    return vals


# ---------------------------------------------------------------------------
# HDG: elementwise condensation onto the trace

@dataclass
class HDGCondensed:
    disc: Discretization
    res: _Resolved
    layout: FaceDofLayout
    system: SparseSystem
    recovery: list
    uhat_fixed: np.ndarray
    f: object
    u_dirichlet: object

    def skeleton_matrix(self):
        return self.system.toarray()

    def solve(self, tol=1e-11):
        report = solve_direct(self.system, tol=tol)
        uhat = self.layout.expand(report.x, self.uhat_fixed)
        return recover_local(self, uhat, report)


def _hdg_local_blocks(disc, res, k, f):
    """Element system A x + C ûloc = F for x = (g, q, u), plus trace rows."""
    cell = disc.cells[k]
    nV, nW, nM = disc.nV, disc.nW, disc.nM
    loc = 2 * nV + nW
    sl_g = slice(0, nV)
    sl_q = slice(nV, 2 * nV)
    sl_u = slice(2 * nV, loc)

    A = np.zeros((loc, loc))
    C = np.zeros((loc, 3 * nM))
    F = np.zeros(loc)

    # gradient definition: -(g, v) - (u, div v) + <uhat, v.n> = 0
    A[sl_g, sl_g] = -np.eye(nV)
    A[sl_g, sl_u] = -cell.DIV
    # flux law
    if res.variant == "HDG_Fa":
        A[sl_q, sl_g] = disc.coeff_matrix(k, res.coefficient.a_at)
        A[sl_q, sl_q] = np.eye(nV)
    else:
        A[sl_q, sl_g] = np.eye(nV)
        A[sl_q, sl_q] = disc.coeff_matrix(k, res.coefficient.c_at)
    # local balance: -(q, grad w) + <q.n + tau(u - uhat), w> = (f, w)
    A[sl_u, sl_q] = -cell.GRD.T
    tau = _tau_value(res.stab, cell.h)
    for loc_f, side in enumerate(cell.sides):
        C[sl_g, loc_f * nM:(loc_f + 1) * nM] = side.TVn.T
        A[sl_u, sl_q] += side.VWn.T
        if tau:
            A[sl_u, sl_u] += tau * _penalty_uu(res.stab, side)
            C[sl_u, loc_f * nM:(loc_f + 1) * nM] = -tau * side.TW.T
    F[sl_u] = disc.interior_moments(k, f)

    # trace rows, one block per face: -<mu, q.n + tau(u - uhat)>  (this
    # orientation makes the condensed matrix equal the weak-form Schur
    # complement)
    R = np.zeros((3 * nM, loc))
    D = np.zeros((3 * nM, 3 * nM))
    for loc_f, side in enumerate(cell.sides):
        rows = slice(loc_f * nM, (loc_f + 1) * nM)
        R[rows, sl_q] = -side.TVn
        if tau:
            R[rows, sl_u] = -tau * side.TW
            D[rows, rows] = tau * np.eye(nM)
    return A, C, F, R, D


def assemble_hdg(mesh, config, f, u_dirichlet=None):
    """Condense the four-field variant elementwise onto the free trace DOFs."""
    res = config.resolve()
    disc = build_discretization(mesh, res)
    layout = FaceDofLayout(mesh, disc.nM, mesh.boundary_faces)
    uhat_fixed = _dirichlet_values(disc, u_dirichlet)

    system = SparseSystem(layout.n_free)
    recovery = []
    for k in range(mesh.num_elements):
        A, C, F, R, D = _hdg_local_blocks(disc, res, k, f)
        try:
            X = np.linalg.solve(A, np.column_stack([F, C]))
        except np.linalg.LinAlgError as exc:
            raise ConfigError(
                f"ill-posed variant: local solver singular on element {k} "
                f"({res.variant}, k={res.k}, {res.stab.kind})") from exc
        XF, XC = X[:, 0], X[:, 1:]
        S_k = D - R @ XC
        r_k = -(R @ XF)
        ids = np.concatenate([layout.gids(s.fid) for s in disc.cells[k].sides])
        fixed = np.concatenate([uhat_fixed[s.fid] for s in disc.cells[k].sides])
        drop = ids < 0
        if drop.any():
            r_k = r_k - S_k[:, drop] @ fixed[drop]
        system.add_block(ids, ids, S_k)
        system.add_rhs(ids, r_k)
        recovery.append((XF, XC))
    return HDGCondensed(disc=disc, res=res, layout=layout, system=system,
                        recovery=recovery, uhat_fixed=uhat_fixed,
                        f=f, u_dirichlet=u_dirichlet)


def recover_local(condensed, uhat, report=None):
    """Back-substitute the element unknowns given the full trace table."""
    disc, res = condensed.disc, condensed.res
    mesh = disc.mesh
    nV, nW, nM = disc.nV, disc.nW, disc.nM
    u = np.zeros((mesh.num_elements, nW))
    q = np.zeros((mesh.num_elements, nV))
    g = np.zeros((mesh.num_elements, nV))
    for k in range(mesh.num_elements):
        XF, XC = condensed.recovery[k]
        loc_hat = np.concatenate([uhat[s.fid] for s in disc.cells[k].sides])
        x = XF - XC @ loc_hat
        g[k] = x[:nV]
        q[k] = x[nV:2 * nV]
        u[k] = x[2 * nV:]
    qhat = numerical_flux_trace(disc, res, u, q, uhat)
    return DiffusionSolution(u=u, q=q, g=g, uhat=uhat, qhat_n=qhat, report=report)


def numerical_flux_trace(disc, res, u, q, uhat):
    """Facewise coefficients of q.n + tau(u - uhat), canonical orientation.

    Computed from the first adjacent element; the transmission audit
    checks the two sides agree.
    """
    mesh = disc.mesh
    out = np.zeros((mesh.num_faces, disc.nM))
    done = np.zeros(mesh.num_faces, dtype=bool)
    for k in range(mesh.num_elements):
        cell = disc.cells[k]
        tau = _tau_value(res.stab, cell.h)
        for side in cell.sides:
            if done[side.fid]:
                continue
            val = side.TVn @ q[k]
            if tau:
                val = val + tau * (side.TW @ u[k] - uhat[side.fid])
            out[side.fid] = side.sign * val
            done[side.fid] = True
    return out


# ---------------------------------------------------------------------------
# condensed weak form on (u, uhat)

@dataclass
class WGPrimal:
    disc: Discretization
    res: _Resolved
    layout: FaceDofLayout
    system: SparseSystem
    locals_: list
    uhat_fixed: np.ndarray
    f: object
    u_dirichlet: object

    @property
    def n_interior(self):
        return self.disc.mesh.num_elements * self.disc.nW

    def solve(self, tol=1e-11):
        report = solve_direct(self.system, tol=tol)
        nW = self.disc.nW
        u = report.x[:self.n_interior].reshape(-1, nW)
        uhat = self.layout.expand(report.x[self.n_interior:], self.uhat_fixed)
        return self._finish(u, uhat, report)

    def _finish(self, u, uhat, report):
        disc, res = self.disc, self.res
        q = np.zeros((disc.mesh.num_elements, disc.nV))
        g = np.zeros_like(q)
        for k in range(disc.mesh.num_elements):
            loc_hat = np.array([uhat[s.fid] for s in disc.cells[k].sides])
            g[k] = weakops.weak_gradient(disc, k, u[k], loc_hat)
            q[k] = -(disc.coeff_matrix(k, res.coefficient.a_at) @ g[k])
        qhat = numerical_flux_trace(disc, res, u, q, uhat)
        return DiffusionSolution(u=u, q=q, g=g, uhat=uhat, qhat_n=qhat, report=report)

    def schur_skeleton(self):
        """Eliminate the interior block elementwise; returns (S, rhs) on
        the free trace DOFs, comparable entrywise with assemble_hdg."""
        disc = self.disc
        nW = disc.nW
        sys_s = SparseSystem(self.layout.n_free)
        for k, (ids_hat, block, rhs) in enumerate(self.locals_):
            luu = block[:nW, :nW]
            lue = block[:nW, nW:]
            leu = block[nW:, :nW]
            lee = block[nW:, nW:]
            sol = np.linalg.solve(luu, np.column_stack([rhs[:nW], lue]))
            s_k = lee - leu @ sol[:, 1:]
            r_k = rhs[nW:] - leu @ sol[:, 0]
            sys_s.add_block(ids_hat, ids_hat, s_k)
            sys_s.add_rhs(ids_hat, r_k)
        return sys_s


def assemble_wg_condensed(mesh, config, f, u_dirichlet=None):
    """The (u, uhat) system (a G_w, G_u) + <tau(u - uhat), w - what> = (f, w)."""
    res = config.resolve()
    if res.variant in ("HDG_Fc", "HDG_Fa", "WG2014_FluxForm"):
        raise ConfigError(f"{res.variant} is not assembled in condensed primal form")
    disc = build_discretization(mesh, res)
    layout = FaceDofLayout(mesh, disc.nM, mesh.boundary_faces)
    uhat_fixed = _dirichlet_values(disc, u_dirichlet)

    nW, nM = disc.nW, disc.nM
    nu = mesh.num_elements * nW
    system = SparseSystem(nu + layout.n_free)
    locals_ = []
    for k in range(mesh.num_elements):
        cell = disc.cells[k]
        gm = disc.gmat(k)
        ma = disc.coeff_matrix(k, res.coefficient.a_at)
        block = gm.T @ ma @ gm
        tau = _tau_value(res.stab, cell.h)
        if tau:
            for loc_f, side in enumerate(cell.sides):
                rows = slice(nW + loc_f * nM, nW + (loc_f + 1) * nM)
                block[:nW, :nW] += tau * _penalty_uu(res.stab, side)
                block[:nW, rows] += -tau * side.TW.T
                block[rows, :nW] += -tau * side.TW
                block[rows, rows] += tau * np.eye(nM)
        rhs = np.zeros(nW + 3 * nM)
        rhs[:nW] = disc.interior_moments(k, f)

        ids_u = np.arange(k * nW, (k + 1) * nW)
        gl = np.concatenate([layout.gids(s.fid) for s in cell.sides])
        ids_hat = np.where(gl < 0, -1, nu + gl)
        ids = np.concatenate([ids_u, ids_hat])
        fixed = np.concatenate([np.zeros(nW),
                                *[uhat_fixed[s.fid] for s in cell.sides]])
        drop = ids < 0
        if drop.any():
            rhs = rhs - block[:, drop] @ fixed[drop]
        system.add_block(ids, ids, block)
        system.add_rhs(ids, rhs)
        # keep local pieces (with the interior ids first) for the trace Schur
        locals_.append((gl.copy(), block, rhs))
    return WGPrimal(disc=disc, res=res, layout=layout, system=system,
                    locals_=locals_, uhat_fixed=uhat_fixed, f=f,
                    u_dirichlet=u_dirichlet)


# ---------------------------------------------------------------------------
# flux-trace weak form on (q, u, qhat)

@dataclass
class FluxForm:
    disc: Discretization
    res: _Resolved
    system: SparseSystem
    f: object
    u_dirichlet: object

    def solve(self, tol=1e-11):
        report = solve_direct(self.system, tol=tol)
        disc, res = self.disc, self.res
        mesh = disc.mesh
        nV, nW, nM = disc.nV, disc.nW, disc.nM
        nq, nu = mesh.num_elements * nV, mesh.num_elements * nW
        q = report.x[:nq].reshape(-1, nV)
        u = report.x[nq:nq + nu].reshape(-1, nW)
        qhat = report.x[nq + nu:].reshape(-1, nM)

        # uhat recovery: P_M(u) + (h/rho)(q - qhat).n, taken from the first
        # adjacent element; the flux-trace rows make both sides agree.
        uhat = np.zeros((mesh.num_faces, nM))
        done = np.zeros(mesh.num_faces, dtype=bool)
        for k in range(mesh.num_elements):
            cell = disc.cells[k]
            hr = cell.h / res.stab.rho
            for side in cell.sides:
                if done[side.fid]:
                    continue
                flux_out = side.TVn @ q[k] - side.sign * qhat[side.fid]
                uhat[side.fid] = side.TW @ u[k] + hr * flux_out
                done[side.fid] = True
        g = np.zeros_like(q)
        for k in range(mesh.num_elements):
            g[k] = -(disc.coeff_matrix(k, res.coefficient.c_at) @ q[k])
        return DiffusionSolution(u=u, q=q, g=g, uhat=uhat, qhat_n=qhat, report=report)


def assemble_wg_flux_form(mesh, config, f, u_dirichlet=None):
    """The (q, u, qhat.n) system of the flux-trace rewriting."""
    res = config.resolve()
    if res.variant != "WG2014_FluxForm":
        raise ConfigError("flux-form assembly is defined for WG2014_FluxForm")
    disc = build_discretization(mesh, res)
    mesh_ = disc.mesh
    nV, nW, nM = disc.nV, disc.nW, disc.nM
    nq = mesh_.num_elements * nV
    nu = mesh_.num_elements * nW
    system = SparseSystem(nq + nu + mesh_.num_faces * nM)
    ud_moments = _dirichlet_values(disc, u_dirichlet)

    for k in range(mesh_.num_elements):
        cell = disc.cells[k]
        hr = cell.h / res.stab.rho
        ids_q = np.arange(k * nV, (k + 1) * nV)
        ids_u = np.arange(nq + k * nW, nq + (k + 1) * nW)
        mc = disc.coeff_matrix(k, res.coefficient.c_at)

        # flux rows: (c q, v) + (h/rho)<(q - qhat).n, v.n> + (grad u, v) = 0
        system.add_block(ids_q, ids_q, mc)
        system.add_block(ids_q, ids_u, cell.GRD)
        system.add_block(ids_u, ids_q, cell.GRD.T)
        system.add_rhs(ids_u, -disc.interior_moments(k, f))
        for side in cell.sides:
            ids_hat = np.arange((nq + nu) + side.fid * nM, (nq + nu) + (side.fid + 1) * nM)
            system.add_block(ids_q, ids_q, hr * (side.TVn.T @ side.TVn))
            system.add_block(ids_q, ids_hat, -hr * side.sign * side.TVn.T)
            # flux-trace rows: -(h/rho)<(q - qhat).n, nu.n> - <u, nu.n> = -<u_D, nu.n>
            system.add_block(ids_hat, ids_q, -hr * side.sign * side.TVn)
            system.add_block(ids_hat, ids_hat, hr * np.eye(nM))
            system.add_block(ids_hat, ids_u, -side.sign * side.TW)
            system.add_block(ids_u, ids_hat, -side.sign * side.TW.T)
            if mesh_.is_boundary(side.fid):
                system.add_rhs(ids_hat, -side.sign * ud_moments[side.fid])
        # value rows entered negated to keep the matrix symmetric:
        # (q, grad w) - <qhat.n, w> = -(f, w)
    return FluxForm(disc=disc, res=res, system=system, f=f, u_dirichlet=u_dirichlet)


# ---------------------------------------------------------------------------
# residual audits

def audit_diffusion(mesh_or_disc, config, sol, f, u_dirichlet=None):
    """Re-test the four defining equations of the underlying hybridized
    method, the interior flux transmission, and the Dirichlet constraint.

    Returns (residuals dict, scale); each entry is an absolute max norm.
    """
    res = config.resolve() if isinstance(config, DiffusionConfig) else config
    disc = (mesh_or_disc if isinstance(mesh_or_disc, Discretization)
            else build_discretization(mesh_or_disc, res))
    mesh = disc.mesh
    out = {"gradient_law": 0.0, "flux_law": 0.0, "local_balance": 0.0,
           "transmission": 0.0, "dirichlet": 0.0}
    scale = 1.0
    flux_jump = np.zeros((mesh.num_faces, disc.nM))
    for k in range(mesh.num_elements):
        cell = disc.cells[k]
        tau = _tau_value(res.stab, cell.h)
        loc_hat = np.array([sol.uhat[s.fid] for s in cell.sides])
        fm = disc.interior_moments(k, f)
        scale = max(scale, np.abs(fm).max(initial=0.0), np.abs(sol.u[k]).max(initial=0.0),
                    np.abs(sol.q[k]).max(initial=0.0))

        r1 = -sol.g[k] + weakops.weak_gradient(disc, k, sol.u[k], loc_hat)
        out["gradient_law"] = max(out["gradient_law"], np.abs(r1).max())

        if res.variant in ("HDG_Fc", "WG2014_FluxForm"):
            mc = disc.coeff_matrix(k, res.coefficient.c_at)
            r2 = mc @ sol.q[k] + sol.g[k]
        else:
            ma = disc.coeff_matrix(k, res.coefficient.a_at)
            r2 = sol.q[k] + ma @ sol.g[k]
        out["flux_law"] = max(out["flux_law"], np.abs(r2).max())

        r3 = -(cell.GRD.T @ sol.q[k]) - fm
        for side in cell.sides:
            r3 += side.VWn.T @ sol.q[k]
            if tau:
                r3 += tau * (_penalty_uu(res.stab, side) @ sol.u[k]
                             - side.TW.T @ sol.uhat[side.fid])
        out["local_balance"] = max(out["local_balance"], np.abs(r3).max())

        for side in cell.sides:
            val = side.TVn @ sol.q[k]
            if tau:
                val = val + tau * (side.TW @ sol.u[k] - sol.uhat[side.fid])
            flux_jump[side.fid] += val

    interior = disc.mesh.interior_faces
    if interior.size:
        out["transmission"] = np.abs(flux_jump[interior]).max()
    ud = _dirichlet_values(disc, u_dirichlet)
    bdry = mesh.boundary_faces
    if bdry.size:
        out["dirichlet"] = np.abs(sol.uhat[bdry] - ud[bdry]).max()
    return out, scale
