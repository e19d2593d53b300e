"""Tube coordinates around the dilated surface and the expanded Laplacian.

A point of the tube is X(p, t) = Y(p)/alpha + (t + h(p)) nu(p), with p the
surface chart parameter, h = h0 + h1 sampled on surface nodes, and t the
signed offset. In these coordinates the Euclidean metric has the closed
block form

    G_ij = g_z,ij / alpha^2 + dh_i dh_j,   G_it = dh_i,   G_tt = 1,

with g_z the parallel-surface metric g - 2z II + z^2 III at z = alpha(t+h).
Its inverse and determinant are explicit:

    G^{ij} = alpha^2 g_z^{ij},  G^{it} = -alpha^2 (g_z^{-1} dh)^i,
    G^{tt} = 1 + alpha^2 |dh|^2_{g_z},  sqrt(det G) = sqrt(det g_z)/alpha^2,

so every Laplacian coefficient is analytic in t; only surface derivatives
of fields are discretized.

The tube half-width grows logarithmically in the cylindrical radius. Cutoff
cushions keep their unit-offset ladder but are compressed where the normal
injectivity budget (set by the largest principal curvature) would otherwise
be exceeded at the working dilation; at the default alpha <= 0.1 and
delta <= 0.15 on the catenoid no compression occurs.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidSpec, NotInjective, OutsideTube
from .profile1d import Profile
from .surface import Surface, _dv_spectral

JAC_FLOOR = 0.05        # minimal admissible local volume factor
INJ_SAFETY = 0.92       # fraction of the curvature fold distance we may use


def smoothstep(s):
    """C^2 transition: 1 for s <= 1, 0 for s >= 2, quintic in between."""
    s = np.asarray(s, dtype=float)
    x = np.clip(2.0 - s, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


@dataclass
class FermiChart:
    surface: Surface
    profile: Profile
    alpha: float
    delta: float
    gamma_log: float
    h0: np.ndarray            # nodal on the surface chart, unscaled surface
    h1: np.ndarray
    t: np.ndarray             # uniform tube grid
    rho: np.ndarray           # half-width of the core tube region
    cushion: np.ndarray       # cutoff unit length (1 where uncompressed)
    axisym: bool
    band_cushions: float = 5.0
    injectivity_margin: float = np.nan
    h: np.ndarray = field(default=None)
    dh: tuple = field(default=None)       # chart derivatives of h
    dh0: tuple = field(default=None)
    dh1: tuple = field(default=None)

    @property
    def chart(self):
        return self.surface.chart

    @property
    def n_t(self):
        return len(self.t)

    @property
    def h_t(self):
        return float(self.t[1] - self.t[0])

    def surf(self, name):
        """Surface cache collapsed to the axisymmetric column when active."""
        arr = getattr(self.chart, name)
        return arr[:, 0] if self.axisym else arr

    def r_alpha(self):
        return self.surf("r_cyl")

    def z_of_t(self, t=None):
        t = self.t if t is None else np.asarray(t, dtype=float)
        return self.alpha * (t[None, :] + self.h[..., None])

    # -- metric data ----------------------------------------------------------
    def metric_blocks(self, z, d_dz: bool = False) -> dict:
        """Parallel-metric inverse blocks at offsets z (broadcast vs nodes)."""
        z = np.asarray(z, dtype=float)
        g11 = self.surf("g11")[..., None]
        g12 = self.surf("g12")[..., None]
        g22 = self.surf("g22")[..., None]
        I11 = self.surf("II11")[..., None]
        I12 = self.surf("II12")[..., None]
        I22 = self.surf("II22")[..., None]
        T11 = self.surf("III11")[..., None]
        T12 = self.surf("III12")[..., None]
        T22 = self.surf("III22")[..., None]
        a11 = g11 - 2 * z * I11 + z**2 * T11
        a12 = g12 - 2 * z * I12 + z**2 * T12
        a22 = g22 - 2 * z * I22 + z**2 * T22
        det = a11 * a22 - a12**2
        out = {
            "z": z,
            "det": det,
            "sqrt_det": np.sqrt(np.maximum(det, 1e-300)),
            "ginv": (a22 / det, -a12 / det, a11 / det),
            "vol_factor": np.sqrt(np.maximum(det, 1e-300) / (g11 * g22 - g12**2)),
        }
        if d_dz:
            d11 = -2 * I11 + 2 * z * T11
            d12 = -2 * I12 + 2 * z * T12
            d22 = -2 * I22 + 2 * z * T22
            ddet = d11 * a22 + a11 * d22 - 2 * a12 * d12
            i11, i12, i22 = out["ginv"]
            out["d_ginv"] = (
                -(i11 * d11 * i11 + 2 * i11 * d12 * i12 + i12 * d22 * i12),
                -(i11 * d11 * i12 + i11 * d12 * i22 + i12 * (d12 * i12 + d22 * i22)),
                -(i12 * d11 * i12 + 2 * i12 * d12 * i22 + i22 * d22 * i22),
            )
            out["d_logsqrt"] = 0.5 * ddet / det
        return out

    def blocks_at_t(self, t=None, d_dz=False):
        return self.metric_blocks(self.z_of_t(t), d_dz=d_dz)

    def volume_factor(self, t=None):
        """dx = vol_factor dV_alpha dt; equals 1 + z^2 K on minimal charts."""
        return self.blocks_at_t(t)["vol_factor"]

    # -- cutoffs --------------------------------------------------------------
    def eta_delta(self, t=None):
        """Interpolation cutoff: 1 through the widened tube, 0 beyond."""
        t = self.t if t is None else np.asarray(t, dtype=float)
        arg = np.abs(t[None, :] + self.h1[..., None]) - self.rho[..., None]
        return smoothstep(arg / self.cushion[..., None] - 3.0)

    def zeta(self, n: int, t=None):
        """Inner cutoff ladder: support grows with n, zeta_n zeta_{n-1} = zeta_{n-1}."""
        if n < 1:
            raise InvalidSpec("cutoff index must be >= 1")
        t = self.t if t is None else np.asarray(t, dtype=float)
        arg = np.abs(t[None, :] + self.h1[..., None]) - self.delta / self.alpha
        return smoothstep(arg / self.cushion[..., None] - n)

    def inside_tube(self, t=None):
        t = self.t if t is None else np.asarray(t, dtype=float)
        return np.abs(t[None, :] + self.h1[..., None]) < self.rho[..., None]

    def valid_mask(self, extra_cushions: float = None, t=None):
        """Usable band per column: |t + h1| <= rho + extra cushions.

        The rectangular (node, t) grid holds corner samples beyond the local
        fold budget of high-curvature columns; those are never part of the
        construction and must stay masked.
        """
        if extra_cushions is None:
            extra_cushions = self.band_cushions
        t = self.t if t is None else np.asarray(t, dtype=float)
        band = self.rho[..., None] + extra_cushions * self.cushion[..., None]
        return np.abs(t[None, :] + self.h1[..., None]) <= band

    def points(self, t=None):
        """Cartesian tube points X(p, t); axisym charts use theta = 0."""
        t = self.t if t is None else np.asarray(t, dtype=float)
        ch = self.chart
        if self.axisym:
            X = ch.X[:, 0, :]
            nu = ch.nu[:, 0, :]
        else:
            X, nu = ch.X, ch.nu
        off = (t[None, :] + self.h[..., None])
        return X[..., None, :] / self.alpha + off[..., None] * nu[..., None, :]

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "delta": self.delta,
            "gamma_log": self.gamma_log,
            "t_extent": float(self.t[-1]),
            "h_t": self.h_t,
            "injectivity_margin": float(self.injectivity_margin),
            "min_cushion": float(self.cushion.min()),
            "axisym": bool(self.axisym),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _d_u(f, hu):
    """Fourth-order first derivative along axis 0, one-sided at the edges."""
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * hu)
    for i in (0, 1):
        out[i] = (-3 * f[i] + 4 * f[i + 1] - f[i + 2]) / (2 * hu)
        out[-1 - i] = (3 * f[-1 - i] - 4 * f[-2 - i] + f[-3 - i]) / (2 * hu)
    return out


def chart_derivs(chart, f, axisym):
    """(d_u f, d_v f) on the surface chart; spectral in the periodic direction."""
    f = np.asarray(f, dtype=float)
    if axisym:
        return _d_u(f, chart.hu), np.zeros_like(f)
    return _d_u(f, chart.hu), _dv_spectral(f, chart.hv, axis=1)


def build_chart(
    surface: Surface,
    profile: Profile,
    alpha: float,
    h0: Optional[np.ndarray] = None,
    h1: Optional[np.ndarray] = None,
    delta: float = 0.15,
    t_spacing: float = 0.05,
    axisym: Optional[bool] = None,
    band_cushions: float = 5.0,
    t_grid: Optional[np.ndarray] = None,
) -> FermiChart:
    """Assemble the tube chart and verify injectivity by sampling.

    h0, h1 are nodal fields on the surface chart (full shape, or a single
    column for axisymmetric use). band_cushions sets how far past the core
    half-width the grid and the injectivity certificate extend: 5 covers
    every cutoff transition (needed for the glued global state), 1 suffices
    for residual evaluation on the core tube and admits larger dilations.
    """
    if not 0.0 < alpha <= 0.5:
        raise InvalidSpec("dilation parameter must lie in (0, 0.5]")
    ch = surface.chart
    if axisym is None:
        axisym = surface.axisymmetric
    shape = (ch.shape[0],) if axisym else ch.shape

    def as_field(x):
        if x is None:
            return np.zeros(shape)
        x = np.asarray(x, dtype=float)
        if axisym and x.ndim == 2:
            x = x[:, 0]
        if x.shape != shape:
            raise InvalidSpec("surface field shape mismatch")
        return x

    h0 = as_field(h0)
    h1 = as_field(h1)
    h = h0 + h1

    r_alpha = ch.r_cyl[:, 0] if axisym else ch.r_cyl
    gamma_log = 4.0 * max(1.0 / profile.sigma_minus, 1.0 / profile.sigma_plus)
    rho = delta / alpha + gamma_log * np.log1p(r_alpha)

    # curvature fold budget in t units: alpha kmax (t + h) < INJ_SAFETY
    A2 = ch.A2[:, 0] if axisym else ch.A2
    kmax = np.sqrt(np.maximum(A2, 0.0) / 2.0)
    with np.errstate(divide="ignore"):
        budget = np.where(kmax > 0, INJ_SAFETY / (alpha * np.maximum(kmax, 1e-300)), np.inf)
    if surface.kind == "catenoid":
        # global budget: the tube edge from one half must not cross the
        # equatorial plane, where it would meet its mirror image
        s = ch.u if axisym else ch.u[:, None] * np.ones(ch.shape[1])[None, :]
        ratio = np.where(np.abs(s) < 1e-9, 1.0, s / np.tanh(np.where(s == 0, 1.0, s)))
        budget = np.minimum(budget, INJ_SAFETY * ratio / alpha)
    budget = budget - np.abs(h)
    if np.any(budget <= rho):
        bad = int(np.argmin(budget - rho))
        raise NotInjective(
            f"tube core wider than the curvature fold budget (node {bad}); reduce delta",
            point=bad)
    cushion = np.minimum(1.0, (budget - rho) / (band_cushions + 1.5))
    cushion = np.maximum(cushion, 0.05)

    t_max = float(np.max(rho + (band_cushions + 1.0) * cushion + np.abs(h1)))
    if t_max > profile.T:
        raise InvalidSpec(
            f"tube needs |t| <= {t_max:.1f} but the profile is sampled to {profile.T}")
    if t_grid is not None:
        t = np.asarray(t_grid, dtype=float)
        if t[-1] < t_max - 1.0:
            raise InvalidSpec("supplied tube grid does not cover the band")
    else:
        n_t = 2 * int(np.ceil(t_max / t_spacing)) + 1
        t = np.linspace(-t_max, t_max, n_t)

    fc = FermiChart(
        surface=surface, profile=profile, alpha=alpha, delta=delta,
        gamma_log=gamma_log, h0=h0, h1=h1, t=t, rho=rho, cushion=cushion,
        axisym=axisym, band_cushions=band_cushions, h=h,
    )
    fc.dh = chart_derivs(ch, h, axisym)
    fc.dh0 = chart_derivs(ch, h0, axisym)
    fc.dh1 = chart_derivs(ch, h1, axisym)
    fc.injectivity_margin = _verify_injectivity(fc)
    return fc


def _verify_injectivity(fc: FermiChart) -> float:
    """Sampled injectivity certificate; hard error on failure.

    Local: the product of the two normal-offset factors (1 -+ kmax z) must
    stay above JAC_FLOOR across the tube. Global (axisymmetric): the offset
    curves of the tube edges must be simple and stay off the axis.
    """
    ch = fc.chart
    frac = np.linspace(-1.0, 1.0, 9)
    edge = fc.rho + fc.band_cushions * fc.cushion
    tt = frac[None, :] * edge[..., None] - fc.h1[..., None]
    z = fc.alpha * (tt + fc.h[..., None])
    A2 = fc.surf("A2")[..., None]
    kmax = np.sqrt(np.maximum(A2, 0.0) / 2.0)
    jac = (1.0 - kmax * z) * (1.0 + kmax * z)
    margin = float(jac.min())
    if margin < JAC_FLOOR:
        idx = np.unravel_index(int(np.argmin(jac)), jac.shape)
        raise NotInjective(
            f"normal map folds at sample {idx} (volume factor {margin:.3g}); "
            "reduce delta or alpha", point=idx)

    if fc.axisym and fc.surface.kind == "catenoid":
        s = ch.u
        prof_r = np.cosh(s) / fc.alpha
        prof_z = s / fc.alpha
        nu_r = -1.0 / np.cosh(s)
        nu_z = np.tanh(s)
        for row in (-edge - fc.h1, edge - fc.h1):
            cr = prof_r + (row + fc.h) * nu_r
            cz = prof_z + (row + fc.h) * nu_z
            if np.any(cr <= 0):
                raise NotInjective("offset curve crosses the axis; reduce delta")
            if _polyline_self_intersects(cr, cz):
                raise NotInjective("tube boundary self-intersects; reduce delta")
    return margin


def _polyline_self_intersects(x, y) -> bool:
    try:
        from shapely.geometry import LineString

        return not LineString(np.column_stack([x, y])).is_simple
    except Exception:  # pragma: no cover
        return False


# ---------------------------------------------------------------------------
# expansion coefficients (surface-chart frame)
# ---------------------------------------------------------------------------

@dataclass
class LaplacianExpansion:
    """Coefficient split of the tube Laplacian at the sampled offsets.

    a0/b0: surface-operator coefficients at zero offset. a1/b1: slope
    families (value minus flat part over z), with constant parts a10/b10
    and remainders a2/b2. b31: quadratic normal-drift coefficient. All in
    the unscaled chart frame.
    """

    z: np.ndarray
    a0: tuple
    b0: tuple
    a1: tuple
    a10: tuple
    a2: tuple
    b1: tuple
    b10: tuple
    b2: tuple
    b31: np.ndarray


def _first_order_coeffs(fc: FermiChart, mb) -> tuple:
    """b^i(z) = (1/sqrt(det g_z)) d_j (sqrt(det g_z) g_z^{ij}), chart FD."""
    ch = fc.chart
    sd = mb["sqrt_det"]
    i11, i12, i22 = mb["ginv"]
    out = []
    for cu, cv in ((i11, i12), (i12, i22)):
        du = _d_u(sd * cu, ch.hu)
        dv = 0.0 if fc.axisym else _dv_spectral(sd * cv, ch.hv, axis=1)
        out.append((du + dv) / sd)
    return tuple(out)


def laplacian_coefficients(fc: FermiChart, t=None, strict: bool = False) -> LaplacianExpansion:
    """Coefficient families at tube samples (z = alpha (t + h) per node).

    strict=True raises OutsideTube if a sample leaves the core region.
    """
    t = fc.t if t is None else np.asarray(t, dtype=float)
    if strict and np.any(~fc.inside_tube(t)):
        raise OutsideTube("requested samples outside the tube core")
    z = fc.z_of_t(t)

    mb0 = fc.metric_blocks(np.zeros(1), d_dz=True)
    a0 = tuple(c[..., 0] for c in mb0["ginv"])
    b0 = tuple(c[..., 0] for c in _first_order_coeffs(fc, mb0))
    a10 = tuple(c[..., 0] for c in mb0["d_ginv"])

    eps = 1e-5
    mb_eps = fc.metric_blocks(np.full(1, eps))
    b_eps = _first_order_coeffs(fc, mb_eps)
    b10 = tuple((c[..., 0] - c0) / eps for c, c0 in zip(b_eps, b0))

    mb = fc.metric_blocks(z)
    zsafe = np.where(np.abs(z) < 1e-12, 1.0, z)
    small = np.abs(z) < 1e-12
    a1 = tuple(np.where(small, c10[..., None], (c - c0[..., None]) / zsafe)
               for c, c0, c10 in zip(mb["ginv"], a0, a10))
    a2 = tuple(np.where(small, 0.0, (c1 - c10[..., None]) / zsafe)
               for c1, c10 in zip(a1, a10))
    b_z = _first_order_coeffs(fc, mb)
    b1 = tuple(np.where(small, c10[..., None], (c - c0[..., None]) / zsafe)
               for c, c0, c10 in zip(b_z, b0, b10))
    b2 = tuple(np.where(small, 0.0, (c1 - c10[..., None]) / zsafe)
               for c1, c10 in zip(b1, b10))

    A2 = fc.surf("A2")[..., None]
    denom = 1.0 - 0.5 * A2 * z**2
    H_z = A2 * z / denom
    b31 = np.where(small, 0.0, -(H_z - A2 * z) / zsafe**2)
    return LaplacianExpansion(z=z, a0=a0, b0=b0, a1=a1, a10=a10, a2=a2,
                              b1=b1, b10=b10, b2=b2, b31=b31)


# ---------------------------------------------------------------------------
# operator application
# ---------------------------------------------------------------------------

def _tube_blocks(fc: FermiChart):
    """Inverse-metric contractions shared by the apply routines."""
    mb = fc.blocks_at_t(d_dz=True)
    a = fc.alpha
    i11, i12, i22 = mb["ginv"]
    hu, hv = fc.dh
    hu = hu[..., None]
    hv = hv[..., None]
    Gu = -(i11 * hu + i12 * hv) * a**2
    Gv = -(i12 * hu + i22 * hv) * a**2
    Gtt = 1.0 + a**2 * (i11 * hu**2 + 2 * i12 * hu * hv + i22 * hv**2)
    di11, di12, di22 = mb["d_ginv"]
    dGu = -(di11 * hu + di12 * hv) * a**2
    dGv = -(di12 * hu + di22 * hv) * a**2
    dGtt = a**2 * (di11 * hu**2 + 2 * di12 * hu * hv + di22 * hv**2)
    return mb, Gu, Gv, Gtt, dGu, dGv, dGtt


def _surface_div(fc: FermiChart, flux_u, flux_v, sd):
    ch = fc.chart
    div = _d_u(flux_u, ch.hu)
    if not fc.axisym:
        div = div + _dv_spectral(flux_v, ch.hv, axis=1)
    return div / sd


def apply_separated(fc: FermiChart, k: np.ndarray, psi, psi_p, psi_pp) -> np.ndarray:
    """Euclidean Laplacian of v = k(y) psi(t), term-assembled.

    k is a surface field; psi, psi_p, psi_pp sample the profile factor and
    its exact first two derivatives on the tube grid. Only k, h, and the
    first-order coefficient fields are differenced on the chart; everything
    in t is analytic, so the result carries no t-grid error.
    """
    mb, Gu, Gv, Gtt, dGu, dGv, dGtt = _tube_blocks(fc)
    a = fc.alpha
    i11, i12, i22 = mb["ginv"]
    sd = mb["sqrt_det"]
    dL = mb["d_logsqrt"]
    ch = fc.chart

    k = np.asarray(k, dtype=float)
    ku, kv = chart_derivs(ch, k, fc.axisym)
    k3 = k[..., None]
    ku3 = ku[..., None]
    kv3 = kv[..., None]

    nt = fc.n_t
    psi = np.asarray(psi, dtype=float).reshape((1,) * k.ndim + (nt,))
    psi_p = np.asarray(psi_p, dtype=float).reshape((1,) * k.ndim + (nt,))
    psi_pp = np.asarray(psi_pp, dtype=float).reshape((1,) * k.ndim + (nt,))

    flux_u = sd * a**2 * (i11 * ku3 + i12 * kv3)
    flux_v = sd * a**2 * (i12 * ku3 + i22 * kv3)
    term_tt = psi * _surface_div(fc, flux_u, flux_v, sd)

    term_tn = psi_p * _surface_div(fc, sd * Gu * k3, sd * Gv * k3, sd)

    term_nt = a * ((dL * Gu + dGu) * ku3 + (dL * Gv + dGv) * kv3) * psi \
        + (Gu * ku3 + Gv * kv3) * psi_p

    term_nn = k3 * (a * (dL * Gtt + dGtt) * psi_p + Gtt * psi_pp)

    out = term_tt + term_tn + term_nt + term_nn
    return np.where(fc.valid_mask(fc.band_cushions + 0.5), out, np.nan)


def apply_full(fc: FermiChart, v: np.ndarray) -> np.ndarray:
    """Euclidean Laplacian of a gridded tube field v(p, t).

    Fourth-order centered differences in t (two NaN rows at each t edge),
    chart differences on the surface.
    """
    mb, Gu, Gv, Gtt, dGu, dGv, dGtt = _tube_blocks(fc)
    a = fc.alpha
    i11, i12, i22 = mb["ginv"]
    sd = mb["sqrt_det"]
    ch = fc.chart
    ht = fc.h_t

    def d_t(f):
        out = np.full_like(f, np.nan)
        out[..., 2:-2] = (f[..., :-4] - 8 * f[..., 1:-3] + 8 * f[..., 3:-1]
                          - f[..., 4:]) / (12 * ht)
        return out

    vu = _d_u(v, ch.hu)
    vv = 0.0 if fc.axisym else _dv_spectral(v, ch.hv, axis=1)
    vt = d_t(v)

    flux_u = sd * (a**2 * (i11 * vu + i12 * vv) + Gu * vt)
    flux_v = sd * (a**2 * (i12 * vu + i22 * vv) + Gv * vt) if not fc.axisym else 0.0
    flux_t = sd * (Gu * vu + (0.0 if fc.axisym else Gv * vv) + Gtt * vt)

    div = _surface_div(fc, flux_u, flux_v, sd)
    out = div + d_t(flux_t) / sd
    return np.where(fc.valid_mask(fc.band_cushions + 0.5), out, np.nan)


def cutoffs(fc: FermiChart, n: int) -> dict:
    """eta_delta and zeta_n sampled on the tube grid."""
    return {"eta_delta": fc.eta_delta(), f"zeta_{n}": fc.zeta(n)}


def coefficient_decay_report(fc: FermiChart, z_probe: float = 0.4) -> dict:
    """Fitted radial decay of the correction coefficients along the ends.

    Coefficients are converted to the orthonormal frame (chart-frame values
    carry conformal factors) before fitting, so exponents compare across
    charts: slope family ~ r^-2, first-order family ~ r^-3, quadratic
    drift <= r^-6.
    """
    from .fits import fit_power_decay

    exp = laplacian_coefficients(fc, t=np.zeros(1))
    r = fc.r_alpha()
    mask = r > max(4.0, 0.15 * fc.surface.R_max)
    g11 = fc.surf("g11")
    # orthonormal-frame magnitudes: second-order coeffs scale by g11,
    # first-order by sqrt(g11)
    a10_onf = np.abs(exp.a10[0]) * g11
    b10_onf = np.abs(exp.b10[0]) * np.sqrt(g11)
    A2 = fc.surf("A2")
    b31 = np.abs(A2**2 * z_probe / (2.0 * (1.0 - 0.5 * A2 * z_probe**2)))
    return {
        "a1_exponent": float(fit_power_decay(r[mask], a10_onf[mask] + 1e-300)),
        "b1_exponent": float(fit_power_decay(r[mask], b10_onf[mask] + 1e-300)),
        "b31_exponent": float(fit_power_decay(r[mask], b31[mask] + 1e-300)),
    }
