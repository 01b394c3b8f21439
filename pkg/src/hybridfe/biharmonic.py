"""Biharmonic problem with clamped boundary: u = du/dn = 0.

The fourth-order problem is split into two coupled second-order pairs
(sigma = grad z, div sigma = f) and (q = grad u, div q = z).  Three
discretizations are assembled:

* HDG_Full -- four elementwise fields condensed onto the two face
  traces, with penalties tau*(u - uhat) and tau*(z - zhat) in the
  numerical fluxes.
* WG2013   -- the same four-field system with flux penalties on
  (z - zhat) only and sigma traced by its own normal component; solved
  either as the condensed (u, uhat, z, zhat) weak-gradient system or by
  the parallel four-field elimination path.
* WG2014   -- the positive-definite system on (u, uhat, qhat.n) built
  from the composed weak divergence of the weak gradient, with face
  penalties weighted 1/h and 1/h^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import weakops
from .errors import ConfigError, UnsupportedDegreeError
from .fespace import raviart_thomas, scalar_edge, scalar_tri, vector_pk
from .linalg import SolveReport, SparseSystem, solve_direct
from .weakops import Discretization, SpaceTable

VARIANTS = ("HDG_Full", "WG2013", "WG2014")


@dataclass
class BiharmonicConfig:
    variant: str
    k: int
    tau_scale: float = 1.0
    quad_order: int | None = None

    def resolve(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown biharmonic variant {self.variant!r}")
        if self.tau_scale <= 0.0 and self.variant != "WG2013":
            raise ConfigError("tau_scale must be positive")
        k = self.k
        if self.variant == "HDG_Full":
            if k < 1:
                raise ConfigError("HDG_Full needs k >= 1")
            table = SpaceTable(V=vector_pk(k), W=scalar_tri(k), M=scalar_edge(k),
                               Z=scalar_tri(k))
        elif self.variant == "WG2013":
            table = SpaceTable(V=raviart_thomas(k), W=scalar_tri(k), M=scalar_edge(k),
                               Z=scalar_tri(k))
        else:
            if k < 2:
                raise UnsupportedDegreeError("WG2014 needs k >= 2 (auxiliary space P_{k-2})")
            table = SpaceTable(V=vector_pk(k - 1), W=scalar_tri(k), M=scalar_edge(k),
                               N=scalar_edge(k - 1), Z=scalar_tri(k - 2))
        return _ResolvedB(variant=self.variant, k=k, tau_scale=self.tau_scale,
                          table=table, quad_order=self.quad_order)


@dataclass(frozen=True)
class _ResolvedB:
    variant: str
    k: int
    tau_scale: float
    table: SpaceTable
    quad_order: int | None

    def tau(self, h):
        """Flux penalty weight for the two-trace variants."""
        return self.tau_scale * (h if self.variant == "WG2013" else 1.0)

    def tau1(self, h):
        return self.tau_scale / h

    def tau2(self, h):
        return self.tau_scale / h ** 3


def build_discretization(mesh, config):
    res = config.resolve() if isinstance(config, BiharmonicConfig) else config
    return Discretization(mesh, res.table, res.quad_order)


@dataclass
class BiharmonicSolution:
    u: np.ndarray
    z: np.ndarray
    q: np.ndarray
    sigma: np.ndarray
    uhat: np.ndarray
    zhat: np.ndarray          # single valued (first adjacent side for WG2014)
    qhat_n: np.ndarray        # canonical orientation
    sigmahat_n: np.ndarray    # canonical orientation
    report: SolveReport | None = None
    zhat_sides: np.ndarray | None = None   # (nelem, 3, nM) for WG2014 audits

    def dof_map(self):
        return {"u": self.u.ravel(), "z": self.z.ravel(), "q": self.q.ravel(),
                "sigma": self.sigma.ravel(), "uhat": self.uhat.ravel(),
                "zhat": self.zhat.ravel()}


# ---------------------------------------------------------------------------
# four-field elementwise condensation (HDG_Full and the WG2013 parallel path)

class _SkeletonIds:
    """Global index space: all zhat DOFs first, then the free (interior)
    uhat DOFs.  q-flux rows pair with the zhat block, sigma-flux rows
    with the uhat block."""

    def __init__(self, mesh, nM):
        self.nM = nM
        self.n_zhat = mesh.num_faces * nM
        from .diffusion import FaceDofLayout
        self.uhat_layout = FaceDofLayout(mesh, nM, mesh.boundary_faces)
        self.n = self.n_zhat + self.uhat_layout.n_free

    def zhat_ids(self, fid):
        return np.arange(fid * self.nM, (fid + 1) * self.nM)

    def uhat_ids(self, fid):
        g = self.uhat_layout.gids(fid)
        return np.where(g < 0, -1, self.n_zhat + g)


@dataclass
class FourFieldCondensed:
    disc: Discretization
    res: _ResolvedB
    ids: _SkeletonIds
    system: SparseSystem
    recovery: list
    f: object

    def solve(self, tol=1e-11):
        report = solve_direct(self.system, tol=tol)
        mesh = self.disc.mesh
        nM = self.disc.nM
        zhat = report.x[:self.ids.n_zhat].reshape(-1, nM)
        uhat = self.ids.uhat_layout.expand(
            report.x[self.ids.n_zhat:], np.zeros((mesh.num_faces, nM)))
        return _recover_fourfield(self, zhat, uhat, report)


def _fourfield_local(disc, res, k, f):
    """Local system A x + C (zhat|uhat) = F for x = (sigma, z, q, u), plus
    the flux-continuity rows R x + D (zhat|uhat) = 0."""
    cell = disc.cells[k]
    nV, nW, nM = disc.nV, disc.nW, disc.nM
    loc = 2 * (nV + nW)
    sl_s = slice(0, nV)
    sl_z = slice(nV, nV + nW)
    sl_q = slice(nV + nW, 2 * nV + nW)
    sl_u = slice(2 * nV + nW, loc)
    col_z = lambda i: slice(i * nM, (i + 1) * nM)
    col_u = lambda i: slice(3 * nM + i * nM, 3 * nM + (i + 1) * nM)

    tau = res.tau(cell.h)
    pen_on_u = res.variant == "HDG_Full"     # q-flux penalty acts on (u - uhat)
    tau_sigma = tau if res.variant == "HDG_Full" else 0.0

    A = np.zeros((loc, loc))
    C = np.zeros((loc, 6 * nM))
    F = np.zeros(loc)

    # (sigma, m) + (z, div m) - <zhat, m.n> = 0
    A[sl_s, sl_s] = np.eye(nV)
    A[sl_s, sl_z] = cell.DIV
    # -(sigma, grad w) + <sigma.n - tau_s (z - zhat), w> = (f, w)
    A[sl_z, sl_s] = -cell.GRD.T
    # (q, v) + (u, div v) - <uhat, v.n> = 0
    A[sl_q, sl_q] = np.eye(nV)
    A[sl_q, sl_u] = cell.DIV
    # -(q, grad s) + <q.n - tau (X - Xhat), s> = (z, s)
    A[sl_u, sl_q] = -cell.GRD.T
    A[sl_u, sl_z] = -np.eye(nW)

    for i, side in enumerate(cell.sides):
        C[sl_s, col_z(i)] = -side.TVn.T
        C[sl_q, col_u(i)] = -side.TVn.T
        A[sl_z, sl_s] += side.VWn.T
        A[sl_u, sl_q] += side.VWn.T
        if tau_sigma:
            A[sl_z, sl_z] += -tau_sigma * side.WWF
            C[sl_z, col_z(i)] = tau_sigma * side.TW.T
        if tau:
            if pen_on_u:
                A[sl_u, sl_u] += -tau * side.WWF
                C[sl_u, col_u(i)] = tau * side.TW.T
            else:
                A[sl_u, sl_z] += -tau * side.WWF
                C[sl_u, col_z(i)] = tau * side.TW.T
    F[sl_z] = disc.interior_moments(k, f)

    # flux rows: -<mu, sigma.n - tau_s(z - zhat)> (interior)
    #            -<mu, q.n     - tau (X - Xhat)>  (all faces)
    Rs = np.zeros((3 * nM, loc))
    Ds = np.zeros((3 * nM, 6 * nM))
    Rq = np.zeros((3 * nM, loc))
    Dq = np.zeros((3 * nM, 6 * nM))
    for i, side in enumerate(cell.sides):
        rows = slice(i * nM, (i + 1) * nM)
        Rs[rows, sl_s] = -side.TVn
        if tau_sigma:
            Rs[rows, sl_z] = tau_sigma * side.TW
            Ds[rows, col_z(i)] = -tau_sigma * np.eye(nM)
        Rq[rows, sl_q] = -side.TVn
        if tau:
            if pen_on_u:
                Rq[rows, sl_u] = tau * side.TW
                Dq[rows, col_u(i)] = -tau * np.eye(nM)
            else:
                Rq[rows, sl_z] = tau * side.TW
                Dq[rows, col_z(i)] = -tau * np.eye(nM)
    return A, C, F, Rs, Ds, Rq, Dq


def _assemble_fourfield(mesh, res, f):
    disc = build_discretization(mesh, res)
    ids = _SkeletonIds(mesh, disc.nM)
    system = SparseSystem(ids.n)
    recovery = []
    for k in range(mesh.num_elements):
        A, C, F, Rs, Ds, Rq, Dq = _fourfield_local(disc, res, k, f)
        try:
            X = np.linalg.solve(A, np.column_stack([F, C]))
        except np.linalg.LinAlgError as exc:
            raise ConfigError(f"ill-posed variant: singular local block on element {k} "
                              f"({res.variant}, k={res.k})") from exc
        XF, XC = X[:, 0], X[:, 1:]
        recovery.append((XF, XC))

        sides = disc.cells[k].sides
        hat_ids = np.concatenate([ids.zhat_ids(s.fid) for s in sides]
                                 + [ids.uhat_ids(s.fid) for s in sides])
        # sigma-flux rows only on interior faces (row ids pair with uhat)
        rows_s = np.concatenate([ids.uhat_ids(s.fid) for s in sides])
        S_s = Ds - Rs @ XC
        r_s = -(Rs @ XF)
        system.add_block(rows_s, hat_ids, S_s)
        system.add_rhs(rows_s, r_s)
        # q-flux rows on all faces (row ids pair with zhat)
        rows_q = np.concatenate([ids.zhat_ids(s.fid) for s in sides])
        S_q = Dq - Rq @ XC
        r_q = -(Rq @ XF)
        system.add_block(rows_q, hat_ids, S_q)
        system.add_rhs(rows_q, r_q)
    return FourFieldCondensed(disc=disc, res=res, ids=ids, system=system,
                              recovery=recovery, f=f)


def _recover_fourfield(condensed, zhat, uhat, report=None):
    disc, res = condensed.disc, condensed.res
    mesh = disc.mesh
    nV, nW = disc.nV, disc.nW
    sigma = np.zeros((mesh.num_elements, nV))
    z = np.zeros((mesh.num_elements, nW))
    q = np.zeros((mesh.num_elements, nV))
    u = np.zeros((mesh.num_elements, nW))
    for k in range(mesh.num_elements):
        XF, XC = condensed.recovery[k]
        sides = disc.cells[k].sides
        loc_hat = np.concatenate([zhat[s.fid] for s in sides]
                                 + [uhat[s.fid] for s in sides])
        x = XF - XC @ loc_hat
        sigma[k] = x[:nV]
        z[k] = x[nV:nV + nW]
        q[k] = x[nV + nW:2 * nV + nW]
        u[k] = x[2 * nV + nW:]
    qhat, shat = _fourfield_flux_traces(disc, res, u, z, q, sigma, uhat, zhat)
    return BiharmonicSolution(u=u, z=z, q=q, sigma=sigma, uhat=uhat, zhat=zhat,
                              qhat_n=qhat, sigmahat_n=shat, report=report)


def _fourfield_flux_traces(disc, res, u, z, q, sigma, uhat, zhat):
    mesh = disc.mesh
    qhat = np.zeros((mesh.num_faces, disc.nM))
    shat = np.zeros((mesh.num_faces, disc.nM))
    done = np.zeros(mesh.num_faces, dtype=bool)
    pen_on_u = res.variant == "HDG_Full"
    for k in range(mesh.num_elements):
        cell = disc.cells[k]
        tau = res.tau(cell.h)
        tau_sigma = tau if res.variant == "HDG_Full" else 0.0
        for side in cell.sides:
            if done[side.fid]:
                continue
            qv = side.TVn @ q[k]
            if tau:
                if pen_on_u:
                    qv = qv - tau * (side.TW @ u[k] - uhat[side.fid])
                else:
                    qv = qv - tau * (side.TW @ z[k] - zhat[side.fid])
            sv = side.TVn @ sigma[k]
            if tau_sigma:
                sv = sv - tau_sigma * (side.TW @ z[k] - zhat[side.fid])
            qhat[side.fid] = side.sign * qv
            shat[side.fid] = side.sign * sv
            done[side.fid] = True
    return qhat, shat


def assemble_biharmonic_hdg(mesh, config, f):
    """Four-field variant with penalties on both traces, condensed."""
    res = config.resolve()
    if res.variant != "HDG_Full":
        raise ConfigError("assemble_biharmonic_hdg expects variant HDG_Full")
    return _assemble_fourfield(mesh, res, f)


def assemble_wg2013_fourfield(mesh, config, f):
    """Parallel elimination path for WG2013: four-field traces, condensed."""
    res = config.resolve()
    if res.variant != "WG2013":
        raise ConfigError("expected variant WG2013")
    return _assemble_fourfield(mesh, res, f)


# ---------------------------------------------------------------------------
# WG2013 condensed two-pair system

@dataclass
class WG2013Primal:
    disc: Discretization
    res: _ResolvedB
    system: SparseSystem
    n_u: int          # interior u DOFs
    n_uhat: int
    f: object

    def solve(self, tol=1e-11):
        report = solve_direct(self.system, tol=tol)
        disc = self.disc
        mesh = disc.mesh
        nW, nM = disc.nW, disc.nM
        nu, nuh = self.n_u, self.n_uhat
        u = report.x[:nu].reshape(-1, nW)
        layout = _uhat_layout(self)
        uhat = layout.expand(report.x[nu:nu + nuh], np.zeros((mesh.num_faces, nM)))
        z = report.x[nu + nuh:2 * nu + nuh].reshape(-1, nW)
        zhat = report.x[2 * nu + nuh:].reshape(-1, nM)

        q = np.zeros((mesh.num_elements, disc.nV))
        sigma = np.zeros_like(q)
        for k in range(mesh.num_elements):
            sides = disc.cells[k].sides
            q[k] = weakops.weak_gradient(disc, k, u[k], [uhat[s.fid] for s in sides])
            sigma[k] = weakops.weak_gradient(disc, k, z[k], [zhat[s.fid] for s in sides])
        qhat, shat = _fourfield_flux_traces(disc, self.res, u, z, q, sigma, uhat, zhat)
        return BiharmonicSolution(u=u, z=z, q=q, sigma=sigma, uhat=uhat, zhat=zhat,
                                  qhat_n=qhat, sigmahat_n=shat, report=report)


def _uhat_layout(primal):
    from .diffusion import FaceDofLayout
    return FaceDofLayout(primal.disc.mesh, primal.disc.nM,
                         primal.disc.mesh.boundary_faces)


def assemble_wg2013(mesh, config, f):
    """Condensed (u, uhat, z, zhat) system of the two-trace variant.

    Row blocks: tests paired with (u, uhat) enforce -(G_w, G_z) = (f, w);
    tests paired with (z, zhat) enforce -(G_s, G_u) - <tau(z - zhat),
    s - shat> = (z, s).
    """
    res = config.resolve()
    if res.variant != "WG2013":
        raise ConfigError("expected variant WG2013")
    disc = build_discretization(mesh, res)
    from .diffusion import FaceDofLayout
    layout = FaceDofLayout(mesh, disc.nM, mesh.boundary_faces)
    nW, nM = disc.nW, disc.nM
    nu = mesh.num_elements * nW
    nuh = layout.n_free
    nz = nu
    nzh = mesh.num_faces * nM
    system = SparseSystem(nu + nuh + nz + nzh)

    for k in range(mesh.num_elements):
        cell = disc.cells[k]
        gm = disc.gmat(k)
        bloc = -(gm.T @ gm)
        ids_u = np.arange(k * nW, (k + 1) * nW)
        gl = np.concatenate([layout.gids(s.fid) for s in cell.sides])
        ids_uh = np.where(gl < 0, -1, nu + gl)
        ids_upair = np.concatenate([ids_u, ids_uh])
        ids_z = np.arange(nu + nuh + k * nW, nu + nuh + (k + 1) * nW)
        ids_zh = np.concatenate([nu + nuh + nz + s.fid * nM + np.arange(nM)
                                 for s in cell.sides])
        ids_zpair = np.concatenate([ids_z, ids_zh])

        # first equation: rows (u-pair tests) x cols (z-pair)
        system.add_block(ids_upair, ids_zpair, bloc)
        rhs1 = np.zeros(nW + 3 * nM)
        rhs1[:nW] = disc.interior_moments(k, f)
        system.add_rhs(ids_upair, rhs1)
        # second equation: rows (z-pair tests) x cols (u-pair) and (z-pair)
        system.add_block(ids_zpair, ids_upair, bloc)
        zz = np.zeros((nW + 3 * nM, nW + 3 * nM))
        zz[:nW, :nW] -= np.eye(nW)     # -(z, s)
        tau = res.tau(cell.h)
        for i, side in enumerate(cell.sides):
            rows = slice(nW + i * nM, nW + (i + 1) * nM)
            zz[:nW, :nW] += -tau * side.WWF
            zz[:nW, rows] += tau * side.TW.T
            zz[rows, :nW] += tau * side.TW
            zz[rows, rows] += -tau * np.eye(nM)
        system.add_block(ids_zpair, ids_zpair, zz)
    return WG2013Primal(disc=disc, res=res, system=system, n_u=nu, n_uhat=nuh, f=f)


# ---------------------------------------------------------------------------
# WG2014: composed weak divergence with 1/h and 1/h^3 penalties

@dataclass
class WG2014System:
    disc: Discretization
    res: _ResolvedB
    system: SparseSystem
    parts: dict               # "div_div" | "tau1" | "tau2" -> SparseSystem
    uhat_layout: object
    qhat_layout: object
    f: object

    @property
    def n_u(self):
        return self.disc.mesh.num_elements * self.disc.nW

    def local_ids(self, k):
        disc = self.disc
        nW = disc.nW
        sides = disc.cells[k].sides
        ids_u = np.arange(k * nW, (k + 1) * nW)
        gu = np.concatenate([self.uhat_layout.gids(s.fid) for s in sides])
        ids_uh = np.where(gu < 0, -1, self.n_u + gu)
        off = self.n_u + self.uhat_layout.n_free
        gq = np.concatenate([self.qhat_layout.gids(s.fid) for s in sides])
        ids_qh = np.where(gq < 0, -1, off + gq)
        return np.concatenate([ids_u, ids_uh, ids_qh])

    def solve(self, tol=1e-11):
        report = solve_direct(self.system, tol=tol)
        disc = self.disc
        mesh = disc.mesh
        nW, nM, nN = disc.nW, disc.nM, disc.nN
        nu = self.n_u
        u = report.x[:nu].reshape(-1, nW)
        uhat = self.uhat_layout.expand(report.x[nu:nu + self.uhat_layout.n_free],
                                       np.zeros((mesh.num_faces, nM)))
        qhat = self.qhat_layout.expand(report.x[nu + self.uhat_layout.n_free:],
                                       np.zeros((mesh.num_faces, nN)))
        return recover_biharmonic_wg2014(disc, self.res, u, uhat, qhat, report)


def _wg2014_local(disc, res, k):
    """Local maps: composed divergence L, penalty rows J (per face) and
    K (per face), on local columns (u | uhat x3 | qhat.n x3)."""
    cell = disc.cells[k]
    nV, nW, nM, nN, nZ = disc.nV, disc.nW, disc.nM, disc.nN, disc.nZ
    ncol = nW + 3 * nM + 3 * nN
    gm = disc.gmat(k)                     # (nV, nW + 3 nM)
    dm = disc.dmat(k)                     # (nZ, nV + 3 nN)
    L = np.zeros((nZ, ncol))
    L[:, :nW + 3 * nM] = dm[:, :nV] @ gm
    for i, side in enumerate(cell.sides):
        cols = slice(nW + 3 * nM + i * nN, nW + 3 * nM + (i + 1) * nN)
        L[:, cols] = side.sign * dm[:, nV + i * nN:nV + (i + 1) * nN]
    J = []
    K = []
    for i, side in enumerate(cell.sides):
        j = np.zeros((nN, ncol))
        j[:, :nW] = side.NgW
        j[:, nW + 3 * nM + i * nN:nW + 3 * nM + (i + 1) * nN] = -side.sign * np.eye(nN)
        J.append(j)
        kk = np.zeros((nM, ncol))
        kk[:, :nW] = side.TW
        kk[:, nW + i * nM:nW + (i + 1) * nM] = -np.eye(nM)
        K.append(kk)
    return L, J, K


def assemble_wg2014(mesh, config, f):
    """SPD system (D_W, D_Q) + <tau1 (grad u - qhat).n, .> + <tau2 (u - uhat), .>."""
    res = config.resolve()
    if res.variant != "WG2014":
        raise ConfigError("expected variant WG2014")
    disc = build_discretization(mesh, res)
    from .diffusion import FaceDofLayout
    uhat_layout = FaceDofLayout(mesh, disc.nM, mesh.boundary_faces)
    qhat_layout = FaceDofLayout(mesh, disc.nN, mesh.boundary_faces)
    n = mesh.num_elements * disc.nW + uhat_layout.n_free + qhat_layout.n_free
    system = SparseSystem(n)
    parts = {name: SparseSystem(n) for name in ("div_div", "tau1", "tau2")}
    holder = WG2014System(disc=disc, res=res, system=system, parts=parts,
                          uhat_layout=uhat_layout, qhat_layout=qhat_layout, f=f)

    nW = disc.nW
    for k in range(mesh.num_elements):
        cell = disc.cells[k]
        L, J, K = _wg2014_local(disc, res, k)
        bdd = L.T @ L
        bt1 = sum(res.tau1(cell.h) * (j.T @ j) for j in J)
        bt2 = sum(res.tau2(cell.h) * (kk.T @ kk) for kk in K)
        ids = holder.local_ids(k)
        rhs = np.zeros(len(ids))
        rhs[:nW] = disc.interior_moments(k, f)
        system.add_block(ids, ids, bdd + bt1 + bt2)
        system.add_rhs(ids, rhs)
        parts["div_div"].add_block(ids, ids, bdd)
        parts["tau1"].add_block(ids, ids, bt1)
        parts["tau2"].add_block(ids, ids, bt2)
    return holder


def recover_biharmonic_wg2014(disc, res, u, uhat, qhat, report=None):
    """Back out z, sigma, and the per-side traces from (u, uhat, qhat.n)."""
    mesh = disc.mesh
    nV, nW, nM, nN, nZ = disc.nV, disc.nW, disc.nM, disc.nN, disc.nZ
    nelem = mesh.num_elements
    z = np.zeros((nelem, nZ))
    q = np.zeros((nelem, nV))
    sigma = np.zeros((nelem, nV))
    zhat_sides = np.zeros((nelem, 3, nM))
    zhat = np.zeros((mesh.num_faces, nM))
    shat = np.zeros((mesh.num_faces, nM))
    qhat_m = np.zeros((mesh.num_faces, nM))
    done = np.zeros(mesh.num_faces, dtype=bool)

    for k in range(nelem):
        cell = disc.cells[k]
        sides = cell.sides
        loc_uhat = np.array([uhat[s.fid] for s in sides])
        q[k] = weakops.weak_gradient(disc, k, u[k], loc_uhat)
        flux_out = np.array([s.sign * qhat[s.fid] for s in sides])
        z[k] = weakops.weak_divergence(disc, k, q[k], flux_out)

        t1 = res.tau1(cell.h)
        t2 = res.tau2(cell.h)
        lift_vals = []
        for i, side in enumerate(sides):
            # zhat = z - tau1 (grad u - qhat).n_out, expressed in the face basis
            nflux = side.NgW @ u[k] - side.sign * qhat[side.fid]
            mn = np.einsum("mq,nq,q->mn", side.Psi, side.Chi, side.wq)
            zh = _z_face_coeffs(side, z[k]) - t1 * (mn @ nflux)
            zhat_sides[k, i] = zh
            lift_vals.append(side.Psi.T @ zh - side.Zf.T @ z[k])
        sigma[k] = weakops.weak_gradient_general(disc, k, z[k], zhat_sides[k], interior="Z")
        phi = weakops.lifting_phi_values(disc, k, lift_vals)
        for i, side in enumerate(sides):
            if done[side.fid]:
                continue
            sv = (side.TVn @ sigma[k] - side.TVn @ phi
                  + t2 * (side.TW @ u[k] - uhat[side.fid]))
            shat[side.fid] = side.sign * sv
            zhat[side.fid] = zhat_sides[k, i]
            mn = np.einsum("mq,nq,q->mn", side.Psi, side.Chi, side.wq)
            qhat_m[side.fid] = mn @ qhat[side.fid]
            done[side.fid] = True
    return BiharmonicSolution(u=u, z=z, q=q, sigma=sigma, uhat=uhat, zhat=zhat,
                              qhat_n=qhat_m, sigmahat_n=shat, report=report,
                              zhat_sides=zhat_sides)


def _z_face_coeffs(side, z_coeffs):
    """Face-basis coefficients of the trace of a Z-space field."""
    return side.TZ @ z_coeffs
