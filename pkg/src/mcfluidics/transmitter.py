"""Pulse-generating transmitter built from junctions and reaction channels.

Clock convention: t = 0 is the moment the triggering bit enters the
Y-junction inlets.  Reactions I and II run in straight (or serpentine,
treated as straight) channels, their products meet at a conjunction and
react in the Reaction III channel, where Y + P -> Z carves a pulse out of
the Y plateau.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

from .errors import ConfigError, SearchError
from .pde_oracle import OracleGrid, Reaction, Species, SpeciesSystem, default_grid, solve
from .transport_core import FlowEnv, RectPulse, ReactionSpec, TimeSeries, theorem1_product

log = logging.getLogger(__name__)

Bits = Sequence[tuple[float, float]]

TRACE_DT = 1e-3


@dataclass(frozen=True)
class SerpentineSpec:
    """Folded Reaction II channel.

    ``L_2`` overrides the computed equivalent length; this is required for
    the 0-delay-line layout, whose straight sub-lengths are not all known.
    """

    L21: float = 0.0
    L22: float = 0.0
    L23: float = 0.0
    Ls: float = 0.0
    Hs: float = 0.0
    delay_lines: int = 2
    L_2: float | None = None

    def __post_init__(self):
        for name in ("L21", "L22", "L23", "Ls", "Hs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"serpentine {name} must be >= 0")
        if self.L_2 is not None and self.L_2 < 0:
            raise ConfigError("serpentine L_2 must be >= 0")


def serpentine_equivalent_length(s: SerpentineSpec) -> float:
    """Equivalent straight length of a serpentine.

    ``n`` delay lines contribute ``2n`` vertical runs of height ``Hs`` and
    ``2n - 1`` horizontal runs of width ``Ls``; n = 2 gives
    ``L21 + L22 + L23 + 4 Hs + 3 Ls``.
    """
    if s.L_2 is not None:
        return float(s.L_2)
    n = s.delay_lines
    if n not in (0, 1, 2):
        raise ConfigError(f"unsupported serpentine topology with {n} delay lines")
    total = s.L21 + s.L22 + s.L23
    if n == 0:
        return float(total)
    return float(total + 2 * n * s.Hs + (2 * n - 1) * s.Ls)


@dataclass(frozen=True)
class OptimizerTolerances:
    zeta: float = 1.0
    delta: float = 0.13
    epsilon: float = 1e-3
    tau: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.zeta <= 1:
            raise ConfigError(f"zeta must lie in [0, 1], got {self.zeta}")
        for name in ("delta", "epsilon", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")


@dataclass(frozen=True)
class TransmitterDesign:
    """Geometry and chemistry of the transmitter.

    ``serpentine=None`` leaves L_2 undetermined, which is the input state of
    :func:`optimize_L2`.
    """

    L_Y: float
    L_1: float
    L_3: float
    L_C: float
    serpentine: SerpentineSpec | None = None
    C_Sy0_I: float = 3.0
    C_X0_II: float = 3.0
    C_X0_III: float = 4.0
    C_Sp0_IV: float = 4.0
    k: float = 400.0
    T_on: float = 2.0
    tolerances: OptimizerTolerances = field(default_factory=OptimizerTolerances)

    def __post_init__(self):
        for name in ("L_Y", "L_1", "L_3", "L_C"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("C_Sy0_I", "C_X0_II", "C_X0_III", "C_Sp0_IV", "k"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.T_on > 0:
            raise ConfigError("T_on must be > 0")
        if self.serpentine is not None and not self.L_2 > self.L_1:
            raise ConfigError(f"Reaction II channel ({self.L_2:.4g} m) must be longer "
                              f"than Reaction I channel ({self.L_1:.4g} m)")

    @property
    def L_2(self) -> float | None:
        return None if self.serpentine is None else serpentine_equivalent_length(self.serpentine)

    def with_L2(self, L_2: float) -> "TransmitterDesign":
        return replace(self, serpentine=SerpentineSpec(delay_lines=0, L_2=L_2))

    def t_Y(self, env: FlowEnv) -> float:
        return math.sqrt(2.0) * self.L_Y / env.v_eff

    def t_C(self, env: FlowEnv) -> float:
        return self.L_C / env.v_eff


def _require_L2(design: TransmitterDesign) -> float:
    if design.L_2 is None:
        raise ConfigError("design has no Reaction II channel length; run optimize_L2 first")
    return design.L_2


def _default_t(design: TransmitterDesign, env: FlowEnv, bits: Bits | None) -> NDArray:
    last = max((b[0] + b[1] for b in bits), default=design.T_on) if bits else design.T_on
    L = max(design.L_1, design.L_2 or 0.0)
    t_end = last + (L + design.L_Y * math.sqrt(2) + design.L_C) / env.v_eff + 1.0
    return np.arange(0.0, t_end + TRACE_DT / 2, TRACE_DT)


def _bits(design: TransmitterDesign, bits: Bits | None) -> list[tuple[float, float]]:
    if bits is None:
        return [(0.0, design.T_on)]
    return [(float(a), float(b)) for a, b in bits]


def y_junction_outlet(design: TransmitterDesign, env: FlowEnv, inlet: RectPulse) -> RectPulse:
    """The junction only delays the pulse by the diagonal branch travel time."""
    env.require_flow()
    return inlet.shifted(design.t_Y(env))


def _product_outlet(L: float, C_X: float, C_S: float, design: TransmitterDesign,
                    env: FlowEnv, t: NDArray, bits: Bits, shift: float) -> NDArray:
    # junction halves both streams before they meet in the reaction channel
    rx = ReactionSpec(design.k, 0.5 * C_S)
    out = np.zeros_like(t)
    for onset, T_on in bits:
        pulse = y_junction_outlet(design, env, RectPulse(0.5 * C_X, T_on, onset))
        pulse = pulse.shifted(shift)
        out += theorem1_product(L, t, env, pulse, rx)
    return out


def reaction1_outlet(design: TransmitterDesign, env: FlowEnv, t: ArrayLike | None = None,
                     bits: Bits | None = None) -> TimeSeries:
    """Species Y at the Reaction I channel outlet."""
    bits = _bits(design, bits)
    t = _default_t(design, env, bits) if t is None else np.asarray(t, dtype=float)
    c = _product_outlet(design.L_1, design.C_X0_II, design.C_Sy0_I, design, env, t, bits, 0.0)
    return TimeSeries(t, c, design.L_Y + design.L_1, "analytical", species="Y")


def reaction2_outlet(design: TransmitterDesign, env: FlowEnv, t: ArrayLike | None = None,
                     bits: Bits | None = None) -> TimeSeries:
    """Species P at the serpentine exit, serpentine treated as straight."""
    L_2 = _require_L2(design)
    bits = _bits(design, bits)
    t = _default_t(design, env, bits) if t is None else np.asarray(t, dtype=float)
    c = _product_outlet(L_2, design.C_X0_III, design.C_Sp0_IV, design, env, t, bits, 0.0)
    return TimeSeries(t, c, design.L_Y + L_2, "analytical", species="P")


def _inlet_Y(design, env, t, bits):
    return 0.5 * _product_outlet(design.L_1, design.C_X0_II, design.C_Sy0_I, design, env,
                                 t, bits, design.t_C(env))


def _inlet_P(design, env, t, bits, L_2):
    return 0.5 * _product_outlet(L_2, design.C_X0_III, design.C_Sp0_IV, design, env,
                                 t, bits, design.t_C(env))


def reaction3_inlets(design: TransmitterDesign, env: FlowEnv, t: ArrayLike | None = None,
                     bits: Bits | None = None) -> tuple[TimeSeries, TimeSeries]:
    """Y and P entering Reaction III, halved again by the conjunction."""
    L_2 = _require_L2(design)
    bits = _bits(design, bits)
    t = _default_t(design, env, bits) if t is None else np.asarray(t, dtype=float)
    station = design.L_Y + design.L_1 + design.L_C
    cy = TimeSeries(t, _inlet_Y(design, env, t, bits), station, "analytical", species="Y")
    cp = TimeSeries(t, _inlet_P(design, env, t, bits, L_2), station, "analytical", species="P")
    return cy, cp


# ---------------------------------------------------------------------------
# optimisation


def peak_time_from_trace(t: NDArray, c: NDArray, delta: float) -> int:
    """Index where the slope, after its steepest rise, first enters [-delta, delta].

    Central differences on the sample grid.
    """
    if not delta > 0:
        raise ConfigError("delta must be > 0")
    d = np.gradient(c, t)
    i_rise = int(np.argmax(d))
    if d[i_rise] <= delta:
        # slope never leaves the band: the first local maximum is the answer
        return int(np.argmax(c))
    inside = np.nonzero(np.abs(d[i_rise:]) <= delta)[0]
    if inside.size == 0:
        raise SearchError("slope never settles into the delta band", operation="pulse_peak_time")
    return i_rise + int(inside[0])


def pulse_peak_time(design: TransmitterDesign, env: FlowEnv,
                    tol: OptimizerTolerances | None = None, dt: float = TRACE_DT
                    ) -> tuple[float, float]:
    """Modified peak time of Y at the Reaction III inlet and the value there."""
    tol = tol or design.tolerances
    if dt > 5e-3:
        raise ConfigError("trace step for numerical differentiation must be <= 5 ms")
    bits = [(0.0, design.T_on)]
    t = np.arange(0.0, _default_t(design, env, bits)[-1], dt)
    c = _inlet_Y(design, env, t, bits)
    i = peak_time_from_trace(t, c, tol.delta)
    return float(t[i]), float(c[i])


@dataclass(frozen=True)
class L2Result:
    L_2: float
    max_C_TX: float
    t_Y_max: float
    peak_Y: float
    t_max_TX: float
    C_P_at_L2: float
    tolerances: OptimizerTolerances

    def as_dict(self) -> dict:
        return {"L_2_m": self.L_2, "max_C_TX_mol_per_m3": self.max_C_TX,
                "t_Y_max_s": self.t_Y_max, "peak_Y_mol_per_m3": self.peak_Y,
                "t_max_TX_s": self.t_max_TX, "C_P_at_L2_mol_per_m3": self.C_P_at_L2,
                "zeta": self.tolerances.zeta, "delta": self.tolerances.delta,
                "epsilon": self.tolerances.epsilon}


def optimize_L2(design: TransmitterDesign, env: FlowEnv,
                tol: OptimizerTolerances | None = None, L_hi: float | None = None) -> L2Result:
    """Longest Reaction II channel whose P still reaches the Reaction III inlet
    (``C_P >= epsilon``) by the time Y attains ``zeta`` times its peak."""
    tol = tol or design.tolerances
    bits = [(0.0, design.T_on)]
    t_Y_max, peak = pulse_peak_time(design, env, tol)
    target = tol.zeta * peak
    if target <= 0:
        raise SearchError("target pulse peak is zero", operation="optimize_L2")

    def cy(tt: float) -> float:
        return float(_inlet_Y(design, env, np.array([tt]), bits)[0])

    if tol.zeta >= 1.0:
        t_tx = t_Y_max
    else:
        # rising-edge root between the Y arrival and the modified peak
        t_lo = design.t_Y(env) + design.t_C(env)
        if cy(t_lo) >= target:
            raise SearchError("target reached before Y arrives", operation="optimize_L2")
        t_tx = brentq(lambda tt: cy(tt) - target, t_lo, t_Y_max, xtol=1e-10)

    def cp(L: float) -> float:
        return float(_inlet_P(design, env, np.array([t_tx]), bits, L)[0])

    L_lo = design.L_1
    L_hi = L_hi or 20.0 * design.L_1
    f_lo, f_hi = cp(L_lo) - tol.epsilon, cp(L_hi) - tol.epsilon
    if not (f_lo >= 0 > f_hi):
        raise ConfigError(
            f"L_2 bracket [{L_lo:.4g}, {L_hi:.4g}] m does not straddle epsilon={tol.epsilon}: "
            f"C_P={f_lo + tol.epsilon:.4g} and {f_hi + tol.epsilon:.4g} at t={t_tx:.4f} s")
    L_2 = brentq(lambda L: cp(L) - tol.epsilon, L_lo, L_hi, xtol=1e-10)
    log.info("optimize_L2: zeta=%g t_Y_max=%.4f s (Reaction III inlet clock, includes t_Y+t_C=%.4f s)"
             " t_max_TX=%.4f s L_2=%.1f um", tol.zeta, t_Y_max,
             design.t_Y(env) + design.t_C(env), t_tx, L_2 * 1e6)
    return L2Result(L_2=L_2, max_C_TX=target, t_Y_max=t_Y_max, peak_Y=peak,
                    t_max_TX=t_tx, C_P_at_L2=cp(L_2), tolerances=tol)


def min_time_gap(design: TransmitterDesign, env: FlowEnv,
                 tol: OptimizerTolerances | None = None, dt: float = 1e-4) -> float:
    """Smallest inter-bit gap so the next Y front misses the previous P tail."""
    tol = tol or design.tolerances
    bits = [(0.0, design.T_on)]
    t = np.arange(0.0, _default_t(design, env, bits)[-1] + 2.0, dt)
    cy, cp = reaction3_inlets(design, env, t, bits)
    above_y = np.nonzero(cy.c > tol.tau)[0]
    above_p = np.nonzero(cp.c >= tol.tau)[0]
    if above_y.size == 0 or above_p.size == 0:
        raise SearchError(f"traces never exceed tau={tol.tau}", operation="min_time_gap")
    return float(t[above_p[-1]] - t[above_y[0]])


def transmitter_system(design: TransmitterDesign, env: FlowEnv, bits: Bits) -> SpeciesSystem:
    """Reaction III channel as an oracle problem fed by the analytic inlets."""
    L_2 = _require_L2(design)
    bits = _bits(design, bits)
    if not bits:
        inlet_y = inlet_p = None
    else:
        inlet_y = lambda tt: _inlet_Y(design, env, tt, bits)  # noqa: E731
        inlet_p = lambda tt: _inlet_P(design, env, tt, bits, L_2)  # noqa: E731
    return SpeciesSystem(
        (Species("Y", inlet_y), Species("P", inlet_p), Species("Z")),
        (Reaction("Y", "P", "Z", design.k),))


def generate_pulse(design: TransmitterDesign, env: FlowEnv, grid: OracleGrid | None = None,
                   bit_stream: Bits | None = None, dx: float = 1e-6) -> TimeSeries:
    """Transmitted pulse C_TX (species Y) at the Reaction III outlet."""
    bits = _bits(design, bit_stream)
    if grid is None:
        t_max = _default_t(design, env, bits)[-1] + design.L_3 / env.v_eff
        grid = default_grid(env, design.L_3, t_max, dx=dx)
    res = solve(transmitter_system(design, env, bits), env, grid, [design.L_3])
    trace = res[design.L_3]["Y"]
    meta = dict(trace.meta)
    meta["bits"] = [list(b) for b in bits]
    return TimeSeries(trace.t, trace.c, design.L_Y + design.L_1 + design.L_C + design.L_3,
                      "oracle", species="Y", meta=meta)


def split_peaks(trace: TimeSeries, bits: Bits) -> list[float]:
    """Peak of the trace inside each bit's slot (slots split at bit onsets)."""
    bits = list(bits)
    edges = [b[0] for b in bits] + [np.inf]
    return [float(np.max(trace.c[(trace.t >= lo) & (trace.t < hi)], initial=0.0))
            for lo, hi in zip(edges[:-1], edges[1:])]
