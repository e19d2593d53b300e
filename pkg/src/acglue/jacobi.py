"""Stability operator of the surface: assembly, projected solves, index.

The operator Delta_M + |A|^2 is discretized in divergence form so that the
area-weighted matrix is exactly symmetric. The weighted eigenvalue count
uses the generalized pencil against the localization weight 1/(1 + r^4);
with a positive weight the count of negative eigenvalues equals the matrix
inertia, which a Sturm sequence gives exactly. Axisymmetric surfaces are
decomposed into angular modes; the full 2-D path exists for generic data.
"""

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidSpec, SingularSystem, UnbalancedBeta
from .errors import NotStabilizedWarning
from .fermi import smoothstep
from .surface import Surface, laplace_beltrami_apply, normal_and_fields

ORTH_TOL = 1e-10


def localization_weight(r):
    return 1.0 / (1.0 + np.asarray(r, dtype=float) ** 4)


@dataclass
class JacobiOperator:
    surface: Surface
    R: float
    active: np.ndarray                 # boolean nodal mask, shape of chart
    A_sym: sp.spmatrix                 # area-weighted -(Delta + |A|^2)
    W: np.ndarray                      # nodal area weights on active nodes
    p: np.ndarray                      # localization weight on active nodes
    index_of: np.ndarray               # nodal -> active index (-1 outside)

    def to_active(self, f):
        return np.asarray(f, dtype=float)[self.active]

    def scatter(self, vals, fill=0.0):
        out = np.full(self.active.shape, fill)
        out[self.active] = vals
        return out

    @property
    def B_sym(self) -> sp.spmatrix:
        return sp.diags(self.W * self.p)

    def gamma_bound(self) -> float:
        """gamma with |A|^2 < gamma p on the active set (lower spectral bound)."""
        ch = self.surface.chart
        A2 = ch.A2[self.active]
        return float(np.max(A2 / self.p)) * 1.0000001


def assemble(surface: Surface, R: float) -> JacobiOperator:
    """Area-weighted symmetric form of -(Delta_M + |A|^2), Dirichlet at r = R."""
    ch = surface.chart
    if R > surface.R_max + 1e-12:
        raise InvalidSpec("truncation radius exceeds the meshed extent")
    if np.abs(ch.g12).max() > 0:
        raise InvalidSpec("assembly requires an orthogonal chart")
    n_u, n_v = ch.shape
    active = ch.r_cyl < R
    active[0, :] = False
    active[-1, :] = False

    idx = -np.ones(ch.shape, dtype=int)
    idx[active] = np.arange(active.sum())
    hu, hv = ch.hu, ch.hv
    wu = hu * np.ones(n_u)
    wv = hv * np.ones(n_v)
    W2 = ch.sqrtg * wu[:, None] * wv[None, :]

    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    # u-direction fluxes: conductance per face = mean(sqrtg g^{uu}) * hv / hu
    c_u = ch.sqrtg * ch.ginv11
    cond_u = 0.5 * (c_u[1:, :] + c_u[:-1, :]) * hv / hu
    iu, jv = np.nonzero(active[:-1, :] | active[1:, :])
    for i, j in zip(iu, jv):
        a, b = idx[i, j], idx[i + 1, j]
        g = cond_u[i, j]
        if a >= 0:
            add(a, a, g)
        if b >= 0:
            add(b, b, g)
        if a >= 0 and b >= 0:
            add(a, b, -g)
            add(b, a, -g)

    # v-direction fluxes (periodic)
    c_v = ch.sqrtg * ch.ginv22
    for j in range(n_v):
        jn = (j + 1) % n_v
        cond = 0.5 * (c_v[:, j] + c_v[:, jn]) * hu / hv
        for i in range(n_u):
            a, b = idx[i, j], idx[i, jn]
            if a < 0 and b < 0:
                continue
            g = cond[i]
            if a >= 0:
                add(a, a, g)
            if b >= 0:
                add(b, b, g)
            if a >= 0 and b >= 0:
                add(a, b, -g)
                add(b, a, -g)

    n = active.sum()
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Wd = W2[active]
    A2 = ch.A2[active]
    A_sym = L - sp.diags(Wd * A2)
    p = localization_weight(ch.r_cyl[active])
    return JacobiOperator(surface, R, active, A_sym.tocsc(), Wd, p, idx)


def symmetry_defect(op: JacobiOperator) -> float:
    d = op.A_sym - op.A_sym.T
    denom = max(1.0, abs(op.A_sym).max())
    return float(abs(d).max() / denom)


@dataclass
class JacobiBasis:
    z: List[np.ndarray]
    zhat: List[np.ndarray]
    J: int
    gram: np.ndarray


def rigid_motion_basis(surface: Surface, op: JacobiOperator,
                       drop_tol: float = 1e-8) -> JacobiBasis:
    """Bounded fields from rigid motions, orthonormalized under the weight.

    Order is fixed (translations x1, x2, x3, then the rotation field);
    members with weighted norm below drop_tol (the rotation field on any
    rotation-invariant surface) are dropped before Gram-Schmidt.
    """
    flds = normal_and_fields(surface)
    raw = [flds["z1"], flds["z2"], flds["z3"], flds["z4"]]
    Wq = op.W * op.p
    zhat = []
    kept = []
    for z in raw:
        v = op.to_active(z)
        nrm2 = float(np.sum(Wq * v * v))
        if nrm2 < drop_tol:
            continue
        for u in zhat:
            v = v - np.sum(Wq * u * v) * u
        nrm2 = float(np.sum(Wq * v * v))
        if nrm2 < drop_tol:
            continue
        zhat.append(v / np.sqrt(nrm2))
        kept.append(op.scatter(v / np.sqrt(nrm2)))
    J = len(zhat)
    gram = np.array([[np.sum(Wq * a * b) for b in zhat] for a in zhat])
    return JacobiBasis(z=[op.to_active(z) for z in raw], zhat=zhat, J=J, gram=gram)


def solve_projected(op: JacobiOperator, f, basis: JacobiBasis):
    """Solve (Delta + |A|^2) h = f + sum_i c_i p zhat_i with h weight-orthogonal
    to every zhat_i; returns (h nodal, c vector).
    """
    fv = op.to_active(f)
    n = op.A_sym.shape[0]
    Q = np.column_stack([op.W * op.p * z for z in basis.zhat]) if basis.J else \
        np.zeros((n, 0))
    # area-weighted form: -A_sym h = W f + Q c, constraints Q^T h = 0
    K = sp.bmat([
        [op.A_sym, sp.csc_matrix(Q)],
        [sp.csc_matrix(Q.T), None if basis.J == 0 else sp.csc_matrix((basis.J, basis.J))],
    ], format="csc")
    rhs = np.concatenate([-(op.W * fv), np.zeros(basis.J)])
    try:
        lu = spla.splu(K)
        sol = lu.solve(rhs)
        for _ in range(2):
            sol = sol + lu.solve(rhs - K @ sol)
    except RuntimeError as exc:  # pragma: no cover
        raise SingularSystem(str(exc))
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("projected solve produced non-finite values")
    h = sol[:n]
    c = sol[n:]
    return op.scatter(h), c


def multiplier_consistency(op: JacobiOperator, basis: JacobiBasis, f, c) -> float:
    """Defect of the solvability identity relating f-projections and c."""
    fv = op.to_active(f)
    Wq = op.W
    worst = 0.0
    for i, zi in enumerate(basis.zhat):
        lhs = np.sum(Wq * fv * zi)
        rhs = 0.0
        for j, zj in enumerate(basis.zhat):
            rhs += c[j] * np.sum(Wq * op.p * zi * zj)
        worst = max(worst, abs(lhs + rhs))
    return worst


# ---------------------------------------------------------------------------
# log-growing fields
# ---------------------------------------------------------------------------

def log_tail_field(surface: Surface, beta: Sequence[float]) -> np.ndarray:
    """Nodal field matching (-1)^k beta_k log r on end k, capped in the core."""
    ch = surface.chart
    if surface.kind == "catenoid":
        s = ch.u[:, None]
        side = np.where(s > 0, beta[1], -beta[0])
        s0 = np.arccosh(2.0)
        cap = 1.0 - smoothstep(np.abs(s) / s0)
        return (cap * side * np.log(np.cosh(s))) * np.ones(ch.shape)
    if surface.kind == "plane":
        rho = ch.u[:, None]
        cap = 1.0 - smoothstep(np.maximum(rho, 1e-9) / 1.0)
        return (cap * (-beta[0]) * np.log(np.maximum(rho, 1e-9))) * np.ones(ch.shape)
    raise InvalidSpec("log tail fields implemented for catenoid and plane")


def log_jacobi_field(surface: Surface, beta: Sequence[float],
                     op: Optional[JacobiOperator] = None,
                     basis: Optional[JacobiBasis] = None) -> dict:
    """Field with prescribed log growth annihilated by the stability operator.

    Returns h0 = p_log + h with h bounded from the projected solve, plus the
    solve multipliers and the interior residual of the full field.
    """
    beta = np.asarray(beta, dtype=float)
    if len(beta) != len(surface.ends):
        raise InvalidSpec("one twist parameter per end required")
    if abs(beta.sum()) > 1e-10:
        raise UnbalancedBeta(f"twist parameters sum to {beta.sum():.3e}")
    if op is None:
        op = assemble(surface, 0.98 * surface.R_max)
    if basis is None:
        basis = rigid_motion_basis(surface, op)
    if np.all(beta == 0.0):
        z = np.zeros(surface.chart.shape)
        return {"h0": z, "h": z, "p_log": z, "c": np.zeros(basis.J), "op": op,
                "basis": basis}
    ch = surface.chart
    p_log = log_tail_field(surface, beta)
    Jp = laplace_beltrami_apply(surface, p_log) + ch.A2 * p_log
    Jp[~np.isfinite(Jp)] = 0.0
    h, c = solve_projected(op, -Jp, basis)
    h0 = p_log + h
    res = laplace_beltrami_apply(surface, h0) + ch.A2 * h0
    interior = op.active & (ch.r_cyl < 0.9 * op.R)
    return {
        "h0": h0,
        "h": h,
        "p_log": p_log,
        "c": c,
        "residual": float(np.abs(res[interior]).max()),
        "op": op,
        "basis": basis,
    }


# ---------------------------------------------------------------------------
# weighted eigenvalue counts
# ---------------------------------------------------------------------------

def _catenoid_mode_matrices(surface: Surface, R: float, m: int, n: int):
    """Tridiagonal pencil of the angular mode m on the truncated catenoid."""
    S = np.arccosh(R)
    s = np.linspace(-S, S, n + 2)[1:-1]
    h = s[1] - s[0]
    sech2 = 1.0 / np.cosh(s) ** 2
    diag = 2.0 / h**2 + m**2 - 2.0 * sech2
    off = -np.ones(n - 1) / h**2
    wgt = np.cosh(s) ** 2 * localization_weight(np.cosh(s))
    return diag, off, wgt, s


def _plane_mode_matrices(surface: Surface, R: float, m: int, n: int):
    """Radial pencil of mode m on the truncated plane (staggered nodes)."""
    h = R / (n + 0.5)
    rho = (np.arange(n) + 0.5) * h
    face = np.arange(n + 1) * h  # face radii, face[0] on the axis
    diag = (face[:-1] + face[1:]) / h**2 + m**2 / rho
    off = -face[1:-1] / h**2
    wgt = rho * localization_weight(rho)
    return diag, off, wgt, rho


def _mode_negative_data(diag, off, wgt, k_report: int = 3):
    """Negative count (exact, by inertia) and the lowest generalized pairs."""
    lam = sla.eigvalsh_tridiagonal(diag, off, select="v",
                                   select_range=(-1e12, 0.0))
    count = len(lam)
    n = len(diag)
    A = sp.diags([off, diag, off], [-1, 0, 1], format="csc")
    B = sp.diags(wgt).tocsc()
    k = min(n - 2, max(k_report, count + 1))
    v0 = np.full(n, 1.0 / np.sqrt(n))
    vals = spla.eigsh(A, k=k, M=B, sigma=0.0, which="LM", v0=v0,
                      return_eigenvectors=False)
    return count, np.sort(vals)


def weighted_index(surface: Surface, R_list: Sequence[float], n_nodes: int = 1200,
                   m_max: int = 3) -> dict:
    """Negative-count sweep of the weighted stability pencil over radii.

    Counts are exact per angular mode through matrix inertia; eigenvalues
    near zero come from a shift-invert solve. The reported index is the
    count at the largest radius with a stabilization flag.
    """
    R_list = sorted(R_list)
    if len(R_list) < 3:
        raise InvalidSpec("need at least three truncation radii")
    if not surface.axisymmetric:
        raise InvalidSpec("weighted index implemented for axisymmetric surfaces")
    mode_mats = _catenoid_mode_matrices if surface.kind == "catenoid" \
        else _plane_mode_matrices

    table = []
    counts = []
    for R in R_list:
        total = 0
        eigs = {}
        for m in range(m_max + 1):
            diag, off, wgt, _ = mode_mats(surface, R, m, n_nodes)
            cnt, lam = _mode_negative_data(diag, off, wgt)
            mult = 1 if m == 0 else 2
            total += mult * cnt
            eigs[m] = lam
        counts.append(total)
        table.append({"R": R, "count": total, "eigenvalues": eigs})
    stabilized = counts[-1] == counts[-2]
    if not stabilized:
        warnings.warn("negative count still changing at the largest radius",
                      NotStabilizedWarning)
    return {
        "i_M": counts[-1],
        "stabilized": stabilized,
        "table": table,
        "counts": counts,
    }


def negative_modes_2d(surface: Surface, R: float, k: int = 8) -> np.ndarray:
    """Generalized eigenvalues near zero of the full 2-D pencil (fallback)."""
    op = assemble(surface, R)
    v0 = np.full(op.A_sym.shape[0], 1.0)
    v0 /= np.linalg.norm(v0)
    vals = spla.eigsh(op.A_sym, k=k, M=op.B_sym.tocsc(), sigma=0.0,
                      which="LM", v0=v0, return_eigenvectors=False)
    return np.sort(vals)
