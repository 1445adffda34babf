"""Closed-form responses of straight microfluidic channels.

All concentrations are in mol/m^3, lengths in m, times in s.  The 1D model
is the dispersion-regime reduction

    dC/dt = D_eff d2C/dx2 - v_eff dC/dx - k C_A C_B

with the reacting co-species supplied continuously at the inlet.  Every
``exp(a) * erfc(b)`` product is evaluated as ``exp(a - b**2) * erfcx(b)``
whenever ``b >= 0`` so that the large Peclet numbers of desk-scale channels
(``v_eff x / D_eff`` of a few hundred) never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import erfc, erfcx, roots_legendre

from .errors import AccuracyError, DomainError, NoCrossingError

Source = Literal["analytical", "oracle"]

_SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class FlowEnv:
    """Flow and transport environment of a channel network.

    ``v_eff`` may be zero only for diffusion-only oracle studies; every
    closed-form response requires a positive mean velocity.
    """

    v_eff: float
    D: float
    D_eff: float | None = None
    rho: float | None = None
    mu: float | None = None

    def __post_init__(self):
        if not self.v_eff >= 0:
            raise DomainError(f"v_eff must be >= 0, got {self.v_eff}")
        if not self.D > 0:
            raise DomainError(f"D must be > 0, got {self.D}")
        if self.D_eff is None:
            object.__setattr__(self, "D_eff", self.D)
        if self.D_eff < self.D:
            raise DomainError(f"D_eff ({self.D_eff}) must be >= D ({self.D})")
        for name in ("rho", "mu"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise DomainError(f"{name} must be > 0 when given, got {val}")

    def require_flow(self) -> None:
        if self.v_eff <= 0:
            raise DomainError("this response needs v_eff > 0")


@dataclass(frozen=True)
class ChannelGeometry:
    length: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("length", "width", "height"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")

    @property
    def hydraulic_diameter(self) -> float:
        return 2 * self.height * self.width / (self.height + self.width)


@dataclass(frozen=True)
class RectPulse:
    C0: float
    T_on: float
    t0: float = 0.0

    def __post_init__(self):
        if self.C0 < 0 or not self.T_on > 0 or self.t0 < 0:
            raise DomainError(f"invalid rectangular pulse {self}")

    def shifted(self, dt: float) -> "RectPulse":
        return RectPulse(self.C0, self.T_on, self.t0 + dt)


@dataclass(frozen=True)
class GaussPulse:
    """Gaussian inlet profile ``C0 / sqrt(2 pi sigma2) * exp(-(t-mu)^2 / 2 sigma2)``.

    ``C0`` is the area under the curve (mol s / m^3), not the peak.
    """

    C0: float
    mu: float
    sigma2: float

    def __post_init__(self):
        if not self.C0 > 0 or not self.sigma2 > 0:
            raise DomainError(f"invalid Gaussian pulse {self}")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    @property
    def peak(self) -> float:
        return self.C0 / np.sqrt(2 * np.pi * self.sigma2)

    def __call__(self, t: ArrayLike) -> NDArray:
        t = np.asarray(t, dtype=float)
        return self.peak * np.exp(-((t - self.mu) ** 2) / (2 * self.sigma2))


@dataclass(frozen=True)
class ReactionSpec:
    k: float
    C_B0: float = 0.0

    def __post_init__(self):
        if self.k < 0 or self.C_B0 < 0:
            raise DomainError(f"invalid reaction spec {self}")


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly or non-uniformly sampled trace at a fixed station.

    Arrays are made read-only on construction.
    """

    t: NDArray
    c: NDArray
    station: float
    source: Source
    species: str = "A"
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        c = np.array(self.c, dtype=float)
        if t.ndim != 1 or t.shape != c.shape or t.size < 2:
            raise DomainError("TimeSeries needs matching 1D arrays of length >= 2")
        if np.any(np.diff(t) <= 0):
            raise DomainError("TimeSeries times must be strictly increasing")
        if self.source not in ("analytical", "oracle"):
            raise DomainError(f"unknown source {self.source!r}")
        t.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "c", c)

    @property
    def peak(self) -> float:
        return float(self.c.max())

    @property
    def t_peak(self) -> float:
        return float(self.t[int(np.argmax(self.c))])

    def at(self, t: ArrayLike) -> NDArray:
        """Linear interpolation, zero outside the sampled span."""
        return np.interp(t, self.t, self.c, left=0.0, right=0.0)

    def scaled(self, factor: float, species: str | None = None) -> "TimeSeries":
        return TimeSeries(self.t, factor * self.c, self.station, self.source,
                          species or self.species, dict(self.meta))

    def clamped(self) -> "TimeSeries":
        return TimeSeries(self.t, np.maximum(self.c, 0.0), self.station,
                          self.source, self.species, dict(self.meta))


# ---------------------------------------------------------------------------
# fluidics


def reynolds_number(rho: float, v_eff: float, D_H: float, mu: float) -> float:
    for name, val in (("rho", rho), ("v_eff", v_eff), ("D_H", D_H), ("mu", mu)):
        if not val > 0:
            raise DomainError(f"{name} must be > 0, got {val}")
    return rho * v_eff * D_H / mu


def poiseuille_velocity(r: ArrayLike, R: float, v_eff: float) -> NDArray:
    """Local axial velocity of fully developed pipe flow at radius ``r``."""
    if not R > 0:
        raise DomainError(f"R must be > 0, got {R}")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > R):
        raise DomainError("radius must satisfy 0 <= r <= R")
    return 2.0 * v_eff * (1.0 - (r / R) ** 2)


def taylor_aris_deff(env: FlowEnv, geom: ChannelGeometry) -> FlowEnv:
    """Return a copy of ``env`` with the Taylor-Aris dispersion coefficient.

    Rectangular cross-section correlation, carrying the leading molecular
    diffusivity factor so the result has units of m^2/s.
    """
    h, w, D, v = geom.height, geom.width, env.D, env.v_eff
    boost = 8.5 * v**2 * h**2 * w**2 / (210.0 * D**2 * (h**2 + 2.4 * h * w + w**2))
    return FlowEnv(v_eff=v, D=D, D_eff=D * (1.0 + boost), rho=env.rho, mu=env.mu)


# ---------------------------------------------------------------------------
# rectangular pulses (superposition of step responses)


def exp_erfc(a: ArrayLike, b: ArrayLike) -> NDArray:
    """``exp(a) * erfc(b)`` for real arrays without intermediate overflow."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.empty(a.shape)
    pos = b >= 0
    with np.errstate(over="raise", under="ignore"):
        out[pos] = np.exp(a[pos] - b[pos] ** 2) * erfcx(b[pos])
        out[~pos] = np.exp(a[~pos]) * erfc(b[~pos])
    return out


def _step_response(x: float, t: NDArray, v: float, D: float, alpha: float, C0: float) -> NDArray:
    """Response to a unit step switched on at t=0 with first-order decay.

    ``alpha = sqrt(v^2 + 4 k' D)`` where ``k'`` is the pseudo-first-order
    rate; ``alpha == v`` gives the pure convection-diffusion step.
    """
    out = np.zeros_like(t)
    live = t > 0
    if not np.any(live):
        return out
    tl = t[live]
    root = 2.0 * np.sqrt(D * tl)
    try:
        out[live] = 0.5 * C0 * (
            exp_erfc((v - alpha) * x / (2 * D), (x - alpha * tl) / root)
            + exp_erfc((v + alpha) * x / (2 * D), (x + alpha * tl) / root)
        )
    except FloatingPointError as exc:
        raise DomainError(f"step response overflow at x={x}") from exc
    return out


def _windowed(step, t: NDArray, T_on: float) -> NDArray:
    # two-branch form: s(t) for t <= T_on, s(t) - s(t - T_on) afterwards
    out = step(t)
    late = t > T_on
    if np.any(late):
        out[late] -= step(t[late] - T_on)
    return out


def _effective_amplitude(rect: RectPulse, rx: ReactionSpec) -> float:
    # one-to-one stoichiometry: only the smaller supply reacts
    return min(rect.C0, rx.C_B0) if rx.k > 0 else rect.C0


def _alpha(env: FlowEnv, k: float, C0: float) -> float:
    return float(np.sqrt(env.v_eff**2 + 4.0 * k * C0 * env.D_eff))


def _check_x(x: float) -> None:
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x}")


def theorem1_reactant(x: float, t: ArrayLike, env: FlowEnv, rect: RectPulse,
                      rx: ReactionSpec) -> NDArray:
    """Reactant concentration for a rectangular inlet pulse.

    The co-reactant is treated as a constant sink of strength ``k * C_0``
    with ``C_0 = min(C_A0, C_B0)``.
    """
    _check_x(x)
    t = np.asarray(t, dtype=float) - rect.t0
    C0 = _effective_amplitude(rect, rx)
    alpha = _alpha(env, rx.k, C0)
    step = lambda tt: _step_response(x, tt, env.v_eff, env.D_eff, alpha, C0)  # noqa: E731
    return _windowed(step, np.atleast_1d(t).copy(), rect.T_on).reshape(np.shape(t))


def convdiff_rect(x: float, t: ArrayLike, env: FlowEnv, rect: RectPulse,
                  amplitude: float | None = None) -> NDArray:
    """Pure convection-diffusion response to a rectangular inlet pulse."""
    _check_x(x)
    t = np.asarray(t, dtype=float) - rect.t0
    C0 = rect.C0 if amplitude is None else amplitude
    alpha = _alpha(env, 0.0, C0)
    step = lambda tt: _step_response(x, tt, env.v_eff, env.D_eff, alpha, C0)  # noqa: E731
    return _windowed(step, np.atleast_1d(t).copy(), rect.T_on).reshape(np.shape(t))


def theorem1_product(x: float, t: ArrayLike, env: FlowEnv, rect: RectPulse,
                     rx: ReactionSpec) -> NDArray:
    """Product concentration: total (A + AB) transport minus surviving A."""
    if rx.k == 0:
        return np.zeros(np.shape(t))
    C0 = _effective_amplitude(rect, rx)
    total = convdiff_rect(x, t, env, rect, amplitude=C0)
    return total - theorem1_reactant(x, t, env, rect, rx)


# ---------------------------------------------------------------------------
# Gaussian pulses


def gauss_crossing_times(g: GaussPulse, C_B0: float) -> tuple[float, float]:
    """Times where the inlet Gaussian equals the threshold ``C_B0``."""
    if not C_B0 > 0:
        raise DomainError(f"C_B0 must be > 0, got {C_B0}")
    ratio = C_B0 * np.sqrt(2 * np.pi * g.sigma2) / g.C0
    if ratio >= 1:
        raise NoCrossingError(
            f"Gaussian peak {g.peak:.6g} does not exceed threshold {C_B0:.6g}")
    half = float(np.sqrt(-2 * g.sigma2 * np.log(ratio)))
    # put t1 on the ulp grid of the largest magnitude involved so that
    # t2 = 2 mu - t1 is exact and t1 + t2 == 2 mu holds bit for bit
    # (guaranteed when t1 >= 0; otherwise within one ulp)
    q = float(np.spacing(max(abs(2.0 * g.mu), abs(g.mu - half), abs(g.mu + half))))
    t1 = round((g.mu - half) / q) * q
    t2 = 2.0 * g.mu - t1
    return t1, t2


def theorem2_appro1(x: float, t: ArrayLike, env: FlowEnv, g: GaussPulse,
                    rx: ReactionSpec) -> NDArray:
    """Residual after instantaneous thresholding, advected without spreading."""
    _check_x(x)
    env.require_flow()
    t = np.asarray(t, dtype=float)
    delay = x / env.v_eff
    shifted = g(t - delay)
    if rx.C_B0 == 0:
        return shifted
    try:
        t1, t2 = gauss_crossing_times(g, rx.C_B0)
    except NoCrossingError:
        return np.zeros_like(t)
    inside = (t >= t1 + delay) & (t <= t2 + delay)
    return np.where(inside, np.maximum(shifted - rx.C_B0, 0.0), 0.0)


def _boundary_transform(s: NDArray, g: GaussPulse, C_B0: float) -> NDArray:
    """Laplace transform of the clipped residual ``max(C_A(0,t) - C_B0, 0)``."""
    if C_B0 == 0:
        return g.C0 * np.exp(-s * g.mu + 0.5 * g.sigma2 * s * s)
    t1, t2 = gauss_crossing_times(g, C_B0)
    sig = g.sigma
    out = np.zeros_like(s)
    for ti, sign in ((t1, 1.0), (t2, -1.0)):
        z = (ti - g.mu + g.sigma2 * s) / sig
        # exp(-s mu + (sigma s)^2/2) Q(z) rewritten with the scaled erfc
        out += sign * 0.5 * g.C0 * np.exp(-s * ti - (ti - g.mu) ** 2 / (2 * g.sigma2)) * erfcx(z / _SQRT2)
    span = t2 - t1
    small = np.abs(s) * span < 1e-8
    window = np.empty_like(s)
    ss = s[~small]
    window[~small] = -np.exp(-ss * t1) * np.expm1(-ss * span) / ss
    window[small] = span * np.exp(-s[small] * t1) * (1 - 0.5 * s[small] * span)
    return out - C_B0 * window


def _spatial_factor(x: float, s: NDArray, env: FlowEnv) -> NDArray:
    v, D = env.v_eff, env.D_eff
    root = np.sqrt(v * v + 4 * D * s + 0j)  # principal branch, Re >= 0
    # (v - root) / (2D) without cancellation at small |s|
    return np.exp(-2.0 * s * x / (v + root))


def theorem2_laplace(x: float, s: ArrayLike, env: FlowEnv, g: GaussPulse,
                     C_B0: float) -> NDArray:
    """Laplace image of the diffusing residual at distance ``x``."""
    _check_x(x)
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    with np.errstate(over="ignore", invalid="ignore"):
        val = _boundary_transform(s, g, C_B0) * _spatial_factor(x, s, env)
    bad = ~np.isfinite(val)
    if np.any(bad):
        raise DomainError(f"Laplace image overflow at s={s[bad][0]!r}")
    return val


@dataclass(frozen=True)
class QuadratureConfig:
    """Settings for the one-sided Fourier inversion.

    ``omega_max=None`` picks the cutoff where the image has decayed by
    ``decay`` relative to its value at zero (capped at ``omega_cap``).
    """

    omega_max: float | None = None
    decay: float = 1e-12
    omega_cap: float = 2.0e4
    nodes_per_panel: int = 16
    tol: float = 1e-6
    max_refinements: int = 6


def _choose_omega_max(x: float, env: FlowEnv, g: GaussPulse, C_B0: float,
                      quad: QuadratureConfig) -> tuple[float, float]:
    ref = abs(theorem2_laplace(x, 0.0, env, g, C_B0)[0])
    omega = 1.0 / g.sigma
    while omega < quad.omega_cap:
        if abs(theorem2_laplace(x, 1j * omega, env, g, C_B0)[0]) < quad.decay * ref:
            break
        omega *= 1.5
    omega = min(omega, quad.omega_cap)
    # tail bound assuming at least 1/omega^2 decay past the cutoff
    tail = float(abs(theorem2_laplace(x, 1j * omega, env, g, C_B0)[0])) * omega / np.pi
    return omega, tail


def _fourier_sum(t: NDArray, nodes: NDArray, weights: NDArray, F: NDArray) -> NDArray:
    out = np.empty_like(t)
    wF = weights * F
    for i in range(0, t.size, 256):
        tt = t[i:i + 256, None]
        out[i:i + 256] = (np.cos(tt * nodes) @ wF.real - np.sin(tt * nodes) @ wF.imag)
    return out / np.pi


def _panel_nodes(omega_max: float, panels: int, order: int) -> tuple[NDArray, NDArray]:
    xg, wg = roots_legendre(order)
    edges = np.linspace(0.0, omega_max, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def theorem2_appro2(x: float, t: ArrayLike, env: FlowEnv, g: GaussPulse, C_B0: float,
                    quad: QuadratureConfig | None = None) -> TimeSeries:
    """Diffusing residual via numerical inversion of its Laplace image.

    ``C(x, t) = (1/pi) * integral_0^wmax Re[exp(j w t) C~(x, j w)] dw``
    with composite Gauss-Legendre panels, refined until two successive
    panel counts agree to ``quad.tol`` (relative to the peak).
    """
    quad = quad or QuadratureConfig()
    t = np.asarray(t, dtype=float)
    try:
        if C_B0 > 0:
            gauss_crossing_times(g, C_B0)
    except NoCrossingError:
        return TimeSeries(t, np.zeros_like(t), x, "analytical",
                          meta={"no_crossing": True})
    env.require_flow()
    if quad.omega_max is None:
        omega_max, tail = _choose_omega_max(x, env, g, C_B0, quad)
    else:
        omega_max = quad.omega_max
        tail = float(abs(theorem2_laplace(x, 1j * omega_max, env, g, C_B0)[0])) * omega_max / np.pi
    centre = g.mu + x / env.v_eff
    reach = float(np.max(np.abs(t - centre))) + 6 * g.sigma
    panels = max(8, int(np.ceil(omega_max * reach / 6.0)))
    prev = None
    err = np.inf
    for _ in range(quad.max_refinements):
        nodes, weights = _panel_nodes(omega_max, panels, quad.nodes_per_panel)
        F = theorem2_laplace(x, 1j * nodes, env, g, C_B0)
        cur = _fourier_sum(t, nodes, weights, F)
        if prev is not None:
            scale = max(float(np.max(np.abs(cur))), 1e-300)
            err = float(np.max(np.abs(cur - prev))) / scale
            if err < quad.tol:
                break
        prev = cur
        panels *= 2
    else:
        raise AccuracyError(f"Fourier inversion did not converge (estimate {err:.3g})", bound=err)
    peak = max(float(np.max(cur)), 1e-300)
    if tail / peak > max(quad.tol, 1e-3):
        raise AccuracyError(f"truncated tail {tail:.3g} exceeds tolerance", bound=tail / peak)
    negative = int(np.sum(cur < -quad.tol * peak))
    c = np.where(cur < -quad.tol * peak, 0.0, cur)
    meta = {"omega_max": omega_max, "panels": panels, "error_estimate": err,
            "tail_estimate": tail, "negative_clamped": negative}
    return TimeSeries(t, c, x, "analytical", meta=meta)
