"""Interface approximations on the tube and the glued global state.

u0 rides the transition profile along the tube coordinate; u1 adds the
second-order corrector pair; the global field interpolates u1 with the pure
phase function +-1 outside the logarithmically widened tube. The global
evaluator inverts the tube map by nearest-point projection, which the
axisymmetric surfaces reduce to a half-plane problem.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidSpec, PointOutsideCharts
from .fermi import FermiChart, smoothstep
from .fields import GridField
from .profile1d import Profile
from .residual import _metric_grad_sq


def validate_beta(ends, beta: Sequence[float], profile: Profile) -> dict:
    """Report the balance and diverging-gap constraints on the end twists."""
    beta = np.asarray(beta, dtype=float)
    rep = {"sum": float(beta.sum()), "sum_ok": abs(beta.sum()) <= 1e-10,
           "gaps": [], "pass": True}
    if len(beta) != len(ends):
        rep["pass"] = False
        rep["error"] = "one twist parameter per end required"
        return rep
    required = 4.0 * max(1.0 / profile.sigma_plus, 1.0 / profile.sigma_minus)
    rep["required_gap"] = required
    for k in range(len(ends) - 1):
        parallel = abs(ends[k + 1].a - ends[k].a) < 1e-14
        gap = float(beta[k + 1] - beta[k])
        entry = {"pair": (k, k + 1), "parallel": parallel, "gap": gap}
        if parallel:
            entry["ok"] = gap > required
            entry["margin"] = gap - required
        else:
            entry["ok"] = True
            entry["margin"] = np.inf
        rep["gaps"].append(entry)
        rep["pass"] = rep["pass"] and entry["ok"]
    rep["pass"] = rep["pass"] and rep["sum_ok"]
    return rep


def build_u0(fc: FermiChart, profile: Profile) -> GridField:
    """Zeroth approximation: the profile ridden along the tube coordinate."""
    vals = np.broadcast_to(profile.w_at(fc.t)[None, :],
                           fc.rho.shape + (fc.n_t,)).copy()
    mask = fc.valid_mask(5.5)
    return GridField(vals, "fermi", chart=fc, mask=mask)


def corrector_amplitudes(fc: FermiChart):
    """(curvature amplitude, gradient amplitude) driving the second corrector."""
    return fc.surf("A2"), _metric_grad_sq(fc, fc.dh0)


def build_u1(fc: FermiChart, profile: Profile) -> GridField:
    """Second-order approximation u0 + corrector pair."""
    a = fc.alpha
    t = fc.t
    B0, B1 = corrector_amplitudes(fc)
    vals = (profile.w_at(t)[None, :]
            + a**2 * B0[..., None] * profile.psi0_at(t)[None, :]
            - a**2 * B1[..., None] * profile.psi1_at(t)[None, :])
    mask = fc.valid_mask(5.5)
    return GridField(vals, "fermi", chart=fc, mask=mask)


def phi1_sup(fc: FermiChart, profile: Profile) -> float:
    u1 = build_u1(fc, profile)
    u0 = build_u0(fc, profile)
    d = np.abs(u1.values - u0.values)[u1.mask]
    return float(d.max())


@dataclass
class GlobalState:
    """Evaluator of the glued field on all of space (axisymmetric surfaces)."""

    fc: FermiChart
    profile: Profile

    def __post_init__(self):
        fcs = self.fc
        if not fcs.axisym:
            raise InvalidSpec("global evaluator implemented for axisymmetric charts")
        if fcs.band_cushions < 5.0:
            raise InvalidSpec("global gluing needs the full cutoff band (band_cushions >= 5)")
        ch = fcs.chart
        self._s = ch.u
        self._h = fcs.h
        self._h1 = fcs.h1
        self._rho = fcs.rho
        self._cushion = fcs.cushion
        B0, B1 = corrector_amplitudes(fcs)
        self._B0, self._B1 = B0, B1

    # surface profile curve in the (r, x3) half plane, unscaled chart param
    def _curve(self, s):
        a = self.fc.alpha
        if self.fc.surface.kind == "catenoid":
            return np.cosh(s) / a, s / a, -1.0 / np.cosh(s), np.tanh(s)
        # plane: chart param is the radius
        return s / a, np.zeros_like(s), np.zeros_like(s), np.ones_like(s)

    def _side(self, r, x3):
        a = self.fc.alpha
        if self.fc.surface.kind == "catenoid":
            return np.where(r < np.cosh(a * x3) / a, 1.0, -1.0)
        return np.where(x3 > 0, 1.0, -1.0)

    def project(self, r, x3, newton: int = 12):
        """Chart parameter, signed offset z, and tube coordinate t per point."""
        a = self.fc.alpha
        s_grid = self._s
        r = np.asarray(r, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        if self.fc.surface.kind == "plane":
            s = np.clip(r * a, s_grid[0], s_grid[-1])
            z = x3
        else:
            cr, cz, _, _ = self._curve(s_grid)
            d2 = (r[..., None] - cr) ** 2 + (x3[..., None] - cz) ** 2
            s = s_grid[np.argmin(d2, axis=-1)]
            for _ in range(newton):
                # stationarity of the squared distance along the curve
                ch_, sh_ = np.cosh(s), np.sinh(s)
                f = -(r - ch_ / a) * sh_ / a - (x3 - s / a) / a
                fp = -(r - ch_ / a) * ch_ / a + sh_**2 / a**2 + 1.0 / a**2
                step = f / fp
                s = np.clip(s - step, s_grid[0], s_grid[-1])
            cr, cz, nr, nz = self._curve(s)
            z = (r - cr) * nr + (x3 - cz) * nz
        h = np.interp(s, s_grid, self._h)
        return s, z, z - h

    def eta_at(self, s, t):
        h1 = np.interp(s, self._s, self._h1)
        rho = np.interp(s, self._s, self._rho)
        cush = np.interp(s, self._s, self._cushion)
        return smoothstep((np.abs(t + h1) - rho) / cush - 3.0)

    def u1_at(self, s, t):
        a = self.fc.alpha
        B0 = np.interp(s, self._s, self._B0)
        B1 = np.interp(s, self._s, self._B1)
        p = self.profile
        return (p.w_at(t) + a**2 * B0 * p.psi0_at(t)
                - a**2 * B1 * p.psi1_at(t))

    def u_rz(self, r, x3):
        """Glued field on (r, x3) arrays."""
        r = np.asarray(r, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        s, z, t = self.project(r, x3)
        side = self._side(r, x3)
        rho = np.interp(s, self._s, self._rho)
        cush = np.interp(s, self._s, self._cushion)
        h1 = np.interp(s, self._s, self._h1)
        outside = np.abs(t + h1) >= rho + 5.0 * cush
        eta = self.eta_at(s, t)
        vals = np.where(outside, side, eta * self.u1_at(s, t) + (1.0 - eta) * side)
        return vals

    def __call__(self, x):
        """Evaluate at Cartesian points of shape (..., 3)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 3:
            raise PointOutsideCharts("points must be Cartesian triples")
        r = np.hypot(x[..., 0], x[..., 1])
        return self.u_rz(r, x[..., 2])

    def grad_rz(self, r, x3, step: float = 1e-4):
        """(d/dr, d/dx3) of the glued field by centered differences."""
        ur = (self.u_rz(r + step, x3) - self.u_rz(r - step, x3)) / (2 * step)
        uz = (self.u_rz(r, x3 + step) - self.u_rz(r, x3 - step)) / (2 * step)
        return ur, uz


def build_global(fc: FermiChart, profile: Profile) -> GlobalState:
    return GlobalState(fc, profile)


@dataclass
class Ansatz:
    fc: FermiChart
    profile: Profile
    beta: np.ndarray
    u0: GridField
    u1: GridField
    w_global: GlobalState

    @property
    def h0(self):
        return self.fc.h0

    @property
    def h1(self):
        return self.fc.h1


def build_ansatz(fc: FermiChart, profile: Profile, beta) -> Ansatz:
    rep = validate_beta(fc.surface.ends, beta, profile)
    if not rep["pass"]:
        raise InvalidSpec(f"twist parameters rejected: {rep}")
    return Ansatz(
        fc=fc, profile=profile, beta=np.asarray(beta, dtype=float),
        u0=build_u0(fc, profile), u1=build_u1(fc, profile),
        w_global=build_global(fc, profile),
    )


def monotonicity_report(ans: Ansatz) -> dict:
    """Transverse monotonicity of u1 through the core tube."""
    fc = ans.fc
    vals = ans.u1.values
    dt = np.diff(vals, axis=-1) / fc.h_t
    core = fc.inside_tube()[:, 1:]
    worst = float(dt[core].min())
    return {"min_dudt": worst, "monotone": bool(worst > 0.0)}


def level_set_fit(ans: Ansatz, n_radii: int = 40) -> dict:
    """Distance of the zero level from the twisted end graphs.

    For each end, the zero-level height is solved along vertical lines and
    compared with F_k(alpha y')/alpha + beta_k log(alpha r); the report
    carries the residual after removing the best constant.
    """
    fc = ans.fc
    surf = fc.surface
    if surf.kind != "catenoid":
        raise InvalidSpec("level-set fit implemented for the catenoid")
    a = fc.alpha
    out = {}
    ge = ans.w_global
    r_lo = 0.35 * surf.R_max / a
    r_hi = 0.9 * surf.R_max / a
    radii = np.linspace(r_lo, r_hi, n_radii)
    for k, end in enumerate(surf.ends):
        sgn = 1.0 if end.a > 0 else -1.0
        guess = (np.arccosh(np.maximum(a * radii, 1.001)) / a) * sgn
        heights = np.empty_like(radii)
        for i, (rr, g0) in enumerate(zip(radii, guess)):
            lo, hi = g0 - 12.0, g0 + 12.0
            zz = np.linspace(lo, hi, 241)
            vals = ge.u_rz(np.full_like(zz, rr), zz)
            j = np.argmin(np.abs(vals))
            zloc = np.linspace(zz[max(0, j - 2)], zz[min(len(zz) - 1, j + 2)], 61)
            v2 = ge.u_rz(np.full_like(zloc, rr), zloc)
            heights[i] = zloc[np.argmin(np.abs(v2))]
        expected = (end.a * np.log(a * radii) + end.b) / a \
            + ans.beta[k] * np.log(a * radii)
        resid = heights - expected
        resid = resid - resid.mean()
        out[f"end_{k}"] = {"residual_sup": float(np.abs(resid).max())}
    return out
