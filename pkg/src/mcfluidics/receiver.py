"""Threshold-and-amplify receiver.

Clock convention: t = 0 is the moment the received pulse enters the
receiver inlet.  Reaction IV (Y + ThL -> waste) removes the part of the
pulse below the threshold supply; Reaction V (Y + Amp -> Y + O) turns any
surviving Y into a flat-topped output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError, NoCrossingError
from .pde_oracle import OracleGrid, Reaction, Species, SpeciesSystem, default_grid, solve
from .transport_core import (FlowEnv, GaussPulse, QuadratureConfig, ReactionSpec, TimeSeries,
                             gauss_crossing_times, theorem2_appro1, theorem2_appro2)

Method = Literal["appro1", "appro2"]


@dataclass(frozen=True)
class ReceiverDesign:
    L_T: float = 80e-6
    L_C: float = 20e-6
    L_4: float = 520e-6
    L_5: float = 470e-6
    C_ThL_VI: float = 0.5
    C_Amp_VII: float = 9.0
    k: float = 400.0
    presence_tau: float = 1e-3
    amp_fraction: float = 1.0 / 3.0

    def __post_init__(self):
        for name in ("L_T", "L_C", "L_4", "L_5", "presence_tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("C_ThL_VI", "C_Amp_VII", "k"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 < self.amp_fraction <= 1:
            raise ConfigError("amp_fraction must lie in (0, 1]")

    @property
    def plateau(self) -> float:
        return self.amp_fraction * self.C_Amp_VII

    def t_T(self, env: FlowEnv) -> float:
        return (self.L_T + self.L_C) / env.v_eff

    def t_V(self, env: FlowEnv) -> float:
        return (self.L_C + self.L_5) / env.v_eff

    def travel(self, env: FlowEnv) -> float:
        """Inlet to Reaction V outlet, plug-flow travel time."""
        return self.t_T(env) + self.L_4 / env.v_eff + self.t_V(env)


@dataclass(frozen=True)
class JunctionOutput:
    pulse: GaussPulse
    threshold: float
    t_T: float


def t_junction_outlet(design: ReceiverDesign, env: FlowEnv, pulse: GaussPulse) -> JunctionOutput:
    """Halve pulse and threshold supply and delay the pulse by the T junction."""
    env.require_flow()
    t_T = design.t_T(env)
    out = GaussPulse(0.5 * pulse.C0, pulse.mu + t_T, pulse.sigma2)
    return JunctionOutput(out, 0.5 * design.C_ThL_VI, t_T)


def default_time_grid(design: ReceiverDesign, env: FlowEnv, pulse: GaussPulse,
                      dt: float = 1e-3) -> NDArray:
    t_end = pulse.mu + 8 * pulse.sigma + design.travel(env) + 0.5
    return np.arange(0.0, t_end + dt / 2, dt)


def reaction4_outlet(design: ReceiverDesign, env: FlowEnv, pulse: GaussPulse,
                     method: Method = "appro2", t: ArrayLike | None = None,
                     quad: QuadratureConfig | None = None) -> TimeSeries:
    """Residual Y leaving the thresholding channel.

    The thresholding solution with the halved pulse and halved threshold, which equals half
    the response to the undiluted pair since the clipped residual scales
    linearly with both.
    """
    t = default_time_grid(design, env, pulse) if t is None else np.asarray(t, dtype=float)
    junction = t_junction_outlet(design, env, pulse)
    local = GaussPulse(0.5 * pulse.C0, pulse.mu, pulse.sigma2)
    station = design.L_T + design.L_C + design.L_4
    thr = junction.threshold
    if thr > 0:
        try:
            gauss_crossing_times(local, thr)
        except NoCrossingError:
            return TimeSeries(t, np.zeros_like(t), station, "analytical", species="Y",
                              meta={"no_crossing": True, "method": method})
    tl = t - junction.t_T
    if method == "appro1":
        c = theorem2_appro1(design.L_4, tl, env, local, ReactionSpec(design.k, thr))
        meta = {"method": method}
    elif method == "appro2":
        ts = theorem2_appro2(design.L_4, tl, env, local, thr, quad)
        c, meta = ts.c, dict(ts.meta, method=method)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return TimeSeries(t, c, station, "analytical", species="Y", meta=meta)


def reaction5_output(design: ReceiverDesign, env: FlowEnv, residual: TimeSeries) -> TimeSeries:
    """Two-valued output: the amplifier plateau wherever delayed residual Y is present."""
    delayed = residual.at(residual.t - design.t_V(env))
    c = np.where(delayed > design.presence_tau, design.plateau, 0.0)
    station = residual.station + design.L_C + design.L_5
    return TimeSeries(residual.t, c, station, residual.source, species="O",
                      meta={"plateau": design.plateau, "presence_tau": design.presence_tau})


def demodulate(design: ReceiverDesign, env: FlowEnv, pulse: GaussPulse,
               method: Method = "appro2", t: ArrayLike | None = None,
               quad: QuadratureConfig | None = None) -> TimeSeries:
    residual = reaction4_outlet(design, env, pulse, method, t, quad)
    return reaction5_output(design, env, residual)


def support(trace: TimeSeries, level: float | None = None) -> tuple[float, float, float]:
    """(start, end, total width) of the samples at or above ``level`` (default: > 0)."""
    on = trace.c > 0 if level is None else trace.c >= level
    if not np.any(on):
        return float("nan"), float("nan"), 0.0
    dt = np.diff(trace.t)
    width = float(np.sum(dt[on[:-1]]))
    idx = np.nonzero(on)[0]
    return float(trace.t[idx[0]]), float(trace.t[idx[-1]]), width


# ---------------------------------------------------------------------------
# oracle cross-check


@dataclass
class OracleReceiver:
    residual: TimeSeries
    output: TimeSeries
    catalyst_out: TimeSeries
    budget: dict


def oracle_demodulate(design: ReceiverDesign, env: FlowEnv,
                      received: GaussPulse | Callable[[NDArray], NDArray],
                      t_max: float, dx: float = 1e-6,
                      grid_iv: OracleGrid | None = None,
                      grid_v: OracleGrid | None = None) -> OracleReceiver:
    """Finite-difference receiver: Reaction IV channel, then Reaction V channel.

    The junctions are still modelled as dilutions with plug-flow delays;
    only the reaction channels are solved numerically.  The Reaction V
    inlet carries Y and leftover ThL diluted by the amplifier stream.
    """
    t_T = design.t_T(env)
    f = received if callable(received) else received.__call__
    y_in = lambda tt: 0.5 * f(tt - t_T)  # noqa: E731
    sys_iv = SpeciesSystem(
        (Species("Y", y_in), Species("ThL", lambda tt: np.where(tt >= t_T, 0.5 * design.C_ThL_VI, 0.0)),
         Species("W")),
        (Reaction("Y", "ThL", "W", design.k),))
    grid_iv = grid_iv or default_grid(env, design.L_4, t_max, dx=dx)
    res_iv = solve(sys_iv, env, grid_iv, [design.L_4])
    y4, thl4 = res_iv[design.L_4]["Y"], res_iv[design.L_4]["ThL"]

    t_C = design.L_C / env.v_eff
    keep = 1.0 - design.amp_fraction
    sys_v = SpeciesSystem(
        (Species("Y", lambda tt: keep * y4.at(tt - t_C)),
         Species("ThL", lambda tt: keep * thl4.at(tt - t_C)),
         Species("Amp", design.amp_fraction * design.C_Amp_VII),
         Species("O"), Species("W")),
        (Reaction("Y", "ThL", "W", design.k),
         Reaction("Y", "Amp", "O", design.k, catalytic=True)))
    grid_v = grid_v or default_grid(env, design.L_5, t_max, dx=dx)
    res_v = solve(sys_v, env, grid_v, [design.L_5])
    station4 = design.L_T + design.L_C + design.L_4
    residual = TimeSeries(y4.t, y4.c, station4, "oracle", species="Y", meta=dict(y4.meta))
    out = res_v[design.L_5]["O"]
    output = TimeSeries(out.t, out.c, station4 + design.L_C + design.L_5, "oracle",
                        species="O", meta=dict(out.meta))
    return OracleReceiver(residual=residual, output=output,
                          catalyst_out=res_v[design.L_5]["Y"],
                          budget={"iv": res_iv.budget, "v": res_v.budget})


def expected_window(design: ReceiverDesign, env: FlowEnv, pulse: GaussPulse) -> tuple[float, float]:
    """Plug-flow output window for a thresholded pulse (empty if under threshold)."""
    local = GaussPulse(0.5 * pulse.C0, pulse.mu, pulse.sigma2)
    try:
        t1, t2 = gauss_crossing_times(local, max(0.5 * design.C_ThL_VI, 1e-300))
    except NoCrossingError:
        return math.nan, math.nan
    shift = design.travel(env)
    return t1 + shift, t2 + shift
