"""Minimal-surface geometry: charts, curvature caches, Laplace-Beltrami.

Two chart families cover the needs here. The catenoid gets a conformal
(s, theta) chart with closed-form metric and curvatures, uniform through the
neck. Asymptotic end models (including the plane) get polar graph charts
x3 = F(rho, theta) built from expansion data a log r + b + dipole/r. All
geometric caches are analytic; only field derivatives are discretized.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import EndsIntersect, InvalidSpec
from .fits import fit_power_decay

GEOM_TOL = 1e-10


@dataclass(frozen=True)
class EndData:
    """Asymptotic data of one end: x3 ~ a log r + b + (d . y)/r^2."""

    a: float
    b: float
    b_dipole: tuple = (0.0, 0.0)
    sign: int = 1
    R0: float = 2.0


class Chart:
    """Structured chart with analytic geometry caches.

    Nodal arrays are indexed (iu, iv). v is the angular direction when
    periodic_v is set. Subclasses fill every cache in __init__.
    """

    name: str
    u: np.ndarray
    v: np.ndarray
    periodic_v: bool
    axis_inner: bool  # inner u-face sits on a coordinate axis (zero-flux face)

    # caches, shape (n_u, n_v [,3])
    X: np.ndarray
    nu: np.ndarray
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    II11: np.ndarray
    II12: np.ndarray
    II22: np.ndarray
    A2: np.ndarray
    K: np.ndarray
    H: np.ndarray
    r_cyl: np.ndarray

    @property
    def hu(self):
        return float(self.u[1] - self.u[0])

    @property
    def hv(self):
        return float(self.v[1] - self.v[0])

    @property
    def shape(self):
        return len(self.u), len(self.v)

    def _finalize(self):
        det = self.g11 * self.g22 - self.g12**2
        self.sqrtg = np.sqrt(det)
        self.ginv11 = self.g22 / det
        self.ginv12 = -self.g12 / det
        self.ginv22 = self.g11 / det
        # shape operator S = g^{-1} II, curvature invariants
        S11 = self.ginv11 * self.II11 + self.ginv12 * self.II12
        S12 = self.ginv11 * self.II12 + self.ginv12 * self.II22
        S21 = self.ginv12 * self.II11 + self.ginv22 * self.II12
        S22 = self.ginv12 * self.II12 + self.ginv22 * self.II22
        self.H = S11 + S22
        self.K = S11 * S22 - S12 * S21
        self.A2 = self.H**2 - 2.0 * self.K
        # third fundamental form III = II g^{-1} II
        self.III11 = self.II11 * S11 + self.II12 * S21
        self.III12 = self.II11 * S12 + self.II12 * S22
        self.III22 = self.II12 * S12 + self.II22 * S22
        self.r_cyl = np.hypot(self.X[..., 0], self.X[..., 1])

    # metric of the parallel surface offset z along nu (z may be an array
    # broadcastable against the nodal shape)
    def shifted_metric(self, z):
        g11 = self.g11 - 2.0 * z * self.II11 + z**2 * self.III11
        g12 = self.g12 - 2.0 * z * self.II12 + z**2 * self.III12
        g22 = self.g22 - 2.0 * z * self.II22 + z**2 * self.III22
        return g11, g12, g22

    def area_weights(self):
        """Trapezoid nodal weights of the surface measure sqrt(g) du dv."""
        wu = np.full(len(self.u), self.hu)
        wu[0] *= 0.5
        wu[-1] *= 0.5
        if self.axis_inner:
            wu[0] = self.hu  # staggered first node owns a full cell
        wv = np.full(len(self.v), self.hv if self.periodic_v else self.hv)
        if not self.periodic_v:
            wv[0] *= 0.5
            wv[-1] *= 0.5
        return self.sqrtg * wu[:, None] * wv[None, :]


class CatenoidChart(Chart):
    """Unit catenoid (cosh s cos t, cosh s sin t, s) in a conformal chart."""

    def __init__(self, S, n_s, n_theta):
        self.name = "catenoid"
        self.u = np.linspace(-S, S, n_s)
        self.v = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
        self.periodic_v = True
        self.axis_inner = False
        s = self.u[:, None]
        th = self.v[None, :]
        ch, sh = np.cosh(s), np.sinh(s)
        ones = np.ones_like(ch * th)
        self.X = np.stack([ch * np.cos(th), ch * np.sin(th), s * np.ones_like(th)], axis=-1)
        self.nu = np.stack([-np.cos(th) / ch * ones, -np.sin(th) / ch * ones,
                            sh / ch * ones], axis=-1)
        self.g11 = ch**2 * ones
        self.g12 = np.zeros_like(self.g11)
        self.g22 = ch**2 * ones
        self.II11 = -ones
        self.II12 = np.zeros_like(ones)
        self.II22 = ones
        self._finalize()

    def embed(self, s, th):
        return np.stack([np.cosh(s) * np.cos(th), np.cosh(s) * np.sin(th),
                         s * np.ones_like(th)], axis=-1)


class GraphEndChart(Chart):
    """Polar graph chart x3 = F(rho, theta) from end expansion data."""

    def __init__(self, end: EndData, R_max, n_r, n_theta, rho_min=None):
        self.name = f"end(a={end.a:g})"
        self.end = end
        if rho_min is None:
            rho_min = end.R0
        if self.axis_chart(end, rho_min):
            # staggered nodes avoid the polar axis; inner face flux vanishes
            h = R_max / n_r
            self.u = (np.arange(n_r) + 0.5) * h
            self.axis_inner = True
        else:
            self.u = np.linspace(rho_min, R_max, n_r)
            self.axis_inner = False
        self.v = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
        self.periodic_v = True

        rho = self.u[:, None]
        th = self.v[None, :]
        ones = np.ones_like(rho * th)
        a, b = end.a, end.b
        d1, d2 = end.b_dipole
        c, s = np.cos(th), np.sin(th)

        F = a * np.log(rho) + b + (d1 * c + d2 * s) / rho
        F_r = a / rho - (d1 * c + d2 * s) / rho**2
        F_t = (-d1 * s + d2 * c) / rho
        F_rr = -a / rho**2 + 2.0 * (d1 * c + d2 * s) / rho**3
        F_rt = (d1 * s - d2 * c) / rho**2
        F_tt = (-d1 * c - d2 * s) / rho
        self._F = (F, F_r, F_t)

        # embedding and tangents in (rho, theta)
        Y_r = np.stack([c * ones, s * ones, F_r], axis=-1)
        Y_t = np.stack([-rho * s, rho * c, F_t], axis=-1)
        self.X = np.stack([rho * c, rho * s, F], axis=-1)
        self.g11 = 1.0 + F_r**2
        self.g12 = F_r * F_t
        self.g22 = rho**2 + F_t**2

        # Cartesian gradient for the normal; sign fixes the orientation
        Fx = F_r * c - F_t * s / rho
        Fy = F_r * s + F_t * c / rho
        W = np.sqrt(1.0 + Fx**2 + Fy**2)
        sg = float(end.sign)
        self.nu = np.stack([sg * Fx / W, sg * Fy / W, -sg / W * ones], axis=-1)

        Y_rr = np.stack([np.zeros_like(F_rr), np.zeros_like(F_rr), F_rr], axis=-1)
        Y_rt = np.stack([-s * ones, c * ones, F_rt], axis=-1)
        Y_tt = np.stack([-rho * c, -rho * s, F_tt], axis=-1)
        self.II11 = np.einsum("...k,...k->...", Y_rr, self.nu)
        self.II12 = np.einsum("...k,...k->...", Y_rt, self.nu)
        self.II22 = np.einsum("...k,...k->...", Y_tt, self.nu)
        self._finalize()

    @staticmethod
    def axis_chart(end, rho_min):
        flat = end.a == 0.0 and end.b_dipole == (0.0, 0.0)
        return flat and rho_min <= 0.0


@dataclass
class Surface:
    kind: str
    charts: List[Chart]
    ends: List[EndData]
    R_max: float
    axisymmetric: bool
    exactly_minimal: bool
    geom_tol: float = GEOM_TOL

    @property
    def chart(self) -> Chart:
        if len(self.charts) != 1:
            raise InvalidSpec("operation needs a single-chart surface")
        return self.charts[0]

    def resample(self, **kw):
        """Fresh surface of the same kind on a different mesh."""
        if self.kind == "catenoid":
            base = dict(R_max=self.R_max, n_s=self.chart.shape[0], n_theta=self.chart.shape[1])
            base.update(kw)
            return catenoid(**base)
        if self.kind == "plane":
            base = dict(R_max=self.R_max, n_r=self.chart.shape[0], n_theta=self.chart.shape[1])
            base.update(kw)
            return plane(**base)
        raise InvalidSpec(f"cannot resample kind {self.kind}")


def check_end_ordering(ends: List[EndData]):
    a = [e.a for e in ends]
    if any(a[i] > a[i + 1] for i in range(len(a) - 1)):
        raise InvalidSpec("ends must be sorted by their log coefficients")
    if abs(sum(a)) > 1e-12:
        raise InvalidSpec("log coefficients must balance to zero")


def catenoid(R_max: float = 20.0, n_s: int = 481, n_theta: int = 64) -> Surface:
    """Unit catenoid truncated at cylindrical radius R_max."""
    if R_max < 10:
        raise InvalidSpec("R_max must be at least 10")
    if n_theta % 2:
        raise InvalidSpec("n_theta must be even")
    S = float(np.arccosh(R_max))
    chart = CatenoidChart(S, n_s, n_theta)
    ends = [
        EndData(a=-1.0, b=-np.log(2.0), b_dipole=(0.0, 0.0), sign=-1, R0=2.0),
        EndData(a=1.0, b=np.log(2.0), b_dipole=(0.0, 0.0), sign=1, R0=2.0),
    ]
    return Surface("catenoid", [chart], ends, R_max, True, True)


def plane(R_max: float = 20.0, n_r: int = 400, n_theta: int = 64) -> Surface:
    # single end carries index k = 1, so the normal points up
    end = EndData(a=0.0, b=0.0, b_dipole=(0.0, 0.0), sign=-1, R0=0.0)
    chart = GraphEndChart(end, R_max, n_r, n_theta, rho_min=0.0)
    return Surface("plane", [chart], [end], R_max, True, True)


def from_end_data(ends: List[EndData], core=None, R_max: float = 20.0,
                  n_r: int = 200, n_theta: int = 64) -> Surface:
    """Asymptotic model surface assembled from end graphs only.

    The core is not meshed; the result is flagged as not exactly minimal.
    A single flat end degenerates to the plane and is exact.
    """
    check_end_ordering(ends)
    if len(ends) == 1 and ends[0].a == 0.0 and ends[0].b_dipole == (0.0, 0.0) \
            and ends[0].b == 0.0:
        return plane(R_max, n_r, n_theta)
    charts = [GraphEndChart(e, R_max, n_r, n_theta) for e in ends]
    _check_ends_disjoint(ends, R_max)
    axis = all(e.b_dipole == (0.0, 0.0) for e in ends)
    return Surface("end_model", charts, list(ends), R_max, axis, False)


def _check_ends_disjoint(ends, R_max):
    r = np.linspace(max(e.R0 for e in ends), R_max, 200)
    th = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    heights = []
    for e in ends:
        d1, d2 = e.b_dipole
        heights.append(e.a * np.log(rr) + e.b + (d1 * np.cos(tt) + d2 * np.sin(tt)) / rr)
    for k in range(len(ends) - 1):
        if np.any(heights[k + 1] - heights[k] <= 0):
            raise EndsIntersect(f"ends {k} and {k + 1} cross inside the model region")


# ---------------------------------------------------------------------------
# discrete Laplace-Beltrami (divergence form, second order)
# ---------------------------------------------------------------------------

def _dv_spectral(f: np.ndarray, hv: float, axis: int = 1) -> np.ndarray:
    """Fourier derivative along the periodic v axis."""
    n = f.shape[axis]
    k = np.fft.rfftfreq(n, d=hv / (2.0 * np.pi))
    shape = [1] * f.ndim
    shape[axis] = len(k)
    return np.fft.irfft(1j * k.reshape(shape) * np.fft.rfft(f, axis=axis), n=n, axis=axis)


def laplace_beltrami_apply(surface: Surface, f: np.ndarray, chart: Optional[Chart] = None) -> np.ndarray:
    """Apply the conservative LB stencil to nodal values on one chart.

    Second-order half-point fluxes in u; spectral derivatives along the
    periodic v direction (exact for resolved harmonics, so the polar axis
    of staggered charts costs no accuracy). u-boundary rows come back NaN:
    the operator there depends on boundary conditions chosen downstream.
    """
    ch = chart or surface.chart
    f = np.asarray(f, dtype=float)
    if f.shape != ch.shape:
        raise InvalidSpec("field shape does not match chart mesh")
    hu, hv = ch.hu, ch.hv
    sg = ch.sqrtg
    c_uu = sg * ch.ginv11
    c_uv = sg * ch.ginv12
    c_vv = sg * ch.ginv22

    out = np.full_like(f, np.nan)

    # u-fluxes with half-point coefficients
    cu_half = 0.5 * (c_uu[1:, :] + c_uu[:-1, :])
    flux_u = cu_half * (f[1:, :] - f[:-1, :]) / hu
    div_u = np.zeros_like(f)
    div_u[1:-1, :] = (flux_u[1:, :] - flux_u[:-1, :]) / hu
    if ch.axis_inner:
        # inner face on the axis carries zero flux
        div_u[0, :] = flux_u[0, :] / hu

    dfdv = _dv_spectral(f, hv)
    div_v = _dv_spectral(c_vv * dfdv, hv)

    # cross terms, symmetric splitting
    cross_u = np.zeros_like(f)
    t = c_uv * dfdv
    cross_u[1:-1, :] = (t[2:, :] - t[:-2, :]) / (2 * hu)
    dfdu = np.zeros_like(f)
    dfdu[1:-1, :] = (f[2:, :] - f[:-2, :]) / (2 * hu)
    cross_v = _dv_spectral(c_uv * dfdu, hv)

    total = div_u + div_v + cross_u + cross_v
    out[1:-1, :] = total[1:-1, :] / sg[1:-1, :]
    if ch.axis_inner:
        out[0, :] = total[0, :] / sg[0, :]
    return out


def surface_gradient_sq(surface: Surface, f: np.ndarray, chart: Optional[Chart] = None) -> np.ndarray:
    """|grad_M f|^2 = g^{ij} d_i f d_j f with centered differences."""
    ch = chart or surface.chart
    fu = np.gradient(f, ch.u, axis=0)
    fp = np.concatenate([f[:, -1:], f, f[:, :1]], axis=1)
    fv = (fp[:, 2:] - fp[:, :-2]) / (2 * ch.hv)
    return ch.ginv11 * fu**2 + 2 * ch.ginv12 * fu * fv + ch.ginv22 * fv**2


def normal_and_fields(surface: Surface, chart: Optional[Chart] = None) -> dict:
    """Unit normal and the four rigid-motion fields on chart nodes."""
    ch = chart or surface.chart
    nu = ch.nu
    x, y = ch.X[..., 0], ch.X[..., 1]
    z4 = -y * nu[..., 0] + x * nu[..., 1]
    return {
        "nu": nu,
        "z1": nu[..., 0],
        "z2": nu[..., 1],
        "z3": nu[..., 2],
        "z4": z4,
    }


def dilation_field(surface: Surface, chart: Optional[Chart] = None) -> np.ndarray:
    """y . nu(y), the log-growing field generated by dilations."""
    ch = chart or surface.chart
    return np.einsum("...k,...k->...", ch.X, ch.nu)


def end_decay_report(surface: Surface) -> dict:
    """Fitted decay exponents of the end-chart geometry.

    Uses graph coordinates along a radial ray: metric defect ~ r^-2, first
    order LB coefficient ~ r^-3, |A|^2 ~ r^-4.
    """
    if surface.kind == "catenoid":
        r = np.linspace(surface.R_max / 4.0, surface.R_max * 0.98, 200)
        Fp = 1.0 / np.sqrt(r**2 - 1.0)          # d/dr arccosh r
        gdef = Fp**2                             # graph metric defect
        W2 = 1.0 + Fp**2
        Fpp = -r / (r**2 - 1.0) ** 1.5
        # b_rho of the graph LB operator: (1/(r W)) d/dr (r / W) expanded
        b_r = 1.0 / r - Fp * Fpp / W2
        b_r = b_r - 1.0 / r                      # subtract the flat polar part
        A2 = 2.0 / np.cosh(np.arccosh(r)) ** 4
    else:
        ch = surface.charts[-1]
        r = ch.u
        half = ch.shape[1] // 4
        gdef = np.abs(ch.g11[:, half] - 1.0) + 1e-300
        W2 = 1.0 + 0 * r
        b_r = None
        A2 = ch.A2[:, half] + 1e-300
    rep = {
        "metric_defect_exponent": fit_power_decay(r, np.abs(gdef) + 1e-300),
        "A2_exponent": fit_power_decay(r, np.abs(A2) + 1e-300),
    }
    if surface.kind == "catenoid":
        rep["b1_exponent"] = fit_power_decay(r, np.abs(b_r) + 1e-300)
    return rep
