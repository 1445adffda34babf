"""Scenario execution: channel studies, transmitter, receiver and full link."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import __version__
from .errors import ConfigError
from .pde_oracle import Reaction, Species, SpeciesSystem, default_grid, solve
from .receiver import (ReceiverDesign, demodulate, expected_window, oracle_demodulate,
                       reaction4_outlet, reaction5_output, support)
from .scenario import Scenario, with_override
from .transmitter import (TransmitterDesign, generate_pulse, min_time_gap, optimize_L2,
                          pulse_peak_time, reaction1_outlet, reaction3_inlets, split_peaks)
from .transport_core import (FlowEnv, GaussPulse, RectPulse, ReactionSpec, TimeSeries,
                             theorem1_product, theorem1_reactant, theorem2_appro1, theorem2_appro2)

log = logging.getLogger(__name__)

FIT_WARN = 0.2


@dataclass
class RunRecord:
    scenario: str
    scenario_hash: str
    pipeline: str
    tolerances: dict
    traces: dict[str, list[TimeSeries]] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    version: str = __version__

    def summary(self) -> dict:
        return {"scenario": self.scenario, "scenario_hash": self.scenario_hash,
                "tool_version": self.version, "pipeline": self.pipeline,
                "tolerances": self.tolerances, "metrics": self.metrics,
                "warnings": list(self.warnings), "probes": sorted(self.traces)}


def _linf(a: TimeSeries, b: TimeSeries) -> float:
    return float(np.max(np.abs(a.c - b.at(a.t))))


def _time_grid(sc: Scenario, t_end: float) -> np.ndarray:
    t_end = sc.outputs.t_end or t_end
    return np.arange(0.0, t_end + sc.outputs.dt / 2, sc.outputs.dt)


def _tolerances(sc: Scenario) -> dict:
    tol = {"trace_dt_s": sc.outputs.dt, "oracle": sc.outputs.oracle, "oracle_dx_m": sc.outputs.dx,
           "oracle_dt_out_s": sc.outputs.dt_out}
    if sc.tx is not None:
        tol.update({f"tx_{k}": v for k, v in asdict(sc.tx.tolerances).items()})
    if sc.rxd is not None:
        tol["rx_presence_tau_mol_per_m3"] = sc.rxd.presence_tau
        tol["rx_amp_fraction"] = sc.rxd.amp_fraction
    return tol


def _label_len(L: float) -> str:
    return f"{L * 1e6:g}um"


# ---------------------------------------------------------------------------
# straight channels


def _run_channel(sc: Scenario, rec: RunRecord) -> None:
    ch, env = sc.channel, sc.env
    v = env.v_eff
    Lmax = max(ch.lengths)
    if ch.kind == "rect":
        t = _time_grid(sc, ch.T_on + Lmax / v + 1.5)
        for C_B0 in ch.C_B0:
            rect = RectPulse(ch.C_A0, ch.T_on)
            rx = ReactionSpec(ch.k, C_B0)
            probes = {}
            for L in ch.lengths:
                lab = f"L{_label_len(L)}_CB{C_B0:g}"
                a = TimeSeries(t, theorem1_reactant(L, t, env, rect, rx), L, "analytical", "A")
                ab = TimeSeries(t, theorem1_product(L, t, env, rect, rx), L, "analytical", "AB")
                rec.traces[lab] = [a, ab]
                rec.metrics[f"{lab}_AB_peak"] = ab.peak
                probes[L] = lab
            if sc.outputs.oracle:
                inlet = lambda tt: np.where((tt > 0) & (tt <= ch.T_on), ch.C_A0, 0.0)  # noqa: E731
                system = SpeciesSystem((Species("A", inlet), Species("B", C_B0), Species("AB")),
                                       (Reaction("A", "B", "AB", ch.k),))
                grid = default_grid(env, Lmax, t[-1], dx=sc.outputs.dx, dt_out=sc.outputs.dt_out)
                res = solve(system, env, grid, list(ch.lengths))
                for L, lab in probes.items():
                    ao, abo = res[L]["A"], res[L]["AB"]
                    rec.traces[lab] += [ao, abo]
                    rec.metrics[f"{lab}_AB_linf"] = _linf(abo, rec.traces[lab][1])
                    rec.metrics[f"{lab}_A_linf"] = _linf(ao, rec.traces[lab][0])
                    rec.metrics[f"{lab}_AB_oracle_peak"] = abo.peak
                if ch.k == 0:
                    rec.metrics[f"CB{C_B0:g}_mass_error"] = max(b["relative_error"] for b in res.budget.values())
    else:
        g = GaussPulse(ch.C_A0, ch.mu, ch.sigma2)
        t = _time_grid(sc, ch.mu + 5 * math.sqrt(ch.sigma2) + Lmax / v + 1.0)
        for C_B0 in ch.C_B0:
            probes = {}
            for L in ch.lengths:
                lab = f"L{_label_len(L)}_CB{C_B0:g}"
                traces = []
                if "appro1" in ch.methods:
                    c = theorem2_appro1(L, t, env, g, ReactionSpec(ch.k, C_B0))
                    traces.append(TimeSeries(t, c, L, "analytical", "A", meta={"method": "appro1"}))
                if "appro2" in ch.methods:
                    ts = theorem2_appro2(L, t, env, g, C_B0)
                    traces.append(TimeSeries(t, ts.c, L, "analytical", "A", meta=dict(ts.meta, method="appro2")))
                rec.traces[lab] = traces
                for tr in traces:
                    rec.metrics[f"{lab}_{tr.meta['method']}_peak"] = tr.peak
                probes[L] = lab
            if sc.outputs.oracle:
                system = SpeciesSystem((Species("A", g), Species("B", C_B0), Species("AB")),
                                       (Reaction("A", "B", "AB", ch.k),))
                grid = default_grid(env, Lmax, t[-1], dx=sc.outputs.dx, dt_out=sc.outputs.dt_out)
                res = solve(system, env, grid, list(ch.lengths))
                for L, lab in probes.items():
                    ao = res[L]["A"]
                    for tr in list(rec.traces[lab]):
                        rec.metrics[f"{lab}_{tr.meta['method']}_linf"] = _linf(ao, tr)
                    rec.traces[lab].append(ao)
                    rec.metrics[f"{lab}_oracle_peak"] = ao.peak


# ---------------------------------------------------------------------------
# transmitter


def _resolve_tx(sc: Scenario, rec: RunRecord) -> TransmitterDesign:
    tx = sc.tx
    if sc.outputs.optimize or tx.L_2 is None:
        res = optimize_L2(tx, sc.env)
        rec.metrics.update({f"opt_{k}": v for k, v in res.as_dict().items()})
        rec.metrics["opt_clock_note"] = (
            "optimizer times are on the Reaction III inlet clock (t_Y + t_C after injection)")
        if tx.L_2 is None:
            tx = tx.with_L2(res.L_2)
    return tx


def _run_transmitter(sc: Scenario, rec: RunRecord) -> TransmitterDesign:
    env = sc.env
    tx = _resolve_tx(sc, rec)
    bits = sc.bit_stream
    last = max((b[0] + b[1] for b in bits), default=tx.T_on)
    t = _time_grid(sc, last + (math.sqrt(2) * tx.L_Y + max(tx.L_1, tx.L_2) + tx.L_C) / env.v_eff + 1.0)
    r1 = reaction1_outlet(tx, env, t, bits)
    cy, cp = reaction3_inlets(tx, env, t, bits)
    rec.traces["reaction1_outlet"] = [r1]
    rec.traces["reaction3_inlet"] = [cy, cp]
    rec.metrics["L_2_m"] = tx.L_2
    t_y_max, peak = pulse_peak_time(tx, env)
    rec.metrics["t_Y_max_s"] = t_y_max
    rec.metrics["peak_Y_inlet_mol_per_m3"] = peak
    rec.metrics["delta_T_min_s"] = min_time_gap(tx, env)
    rec.metrics["reaction1_outlet_peak_mol_per_m3"] = r1.peak
    if sc.outputs.oracle:
        pulse = generate_pulse(tx, env, bit_stream=bits, dx=sc.outputs.dx)
        rec.traces["reaction3_outlet"] = [pulse]
        rec.metrics["pulse_peaks_mol_per_m3"] = split_peaks(pulse, bits) if bits else []
        analytic = np.maximum(cy.c - cp.c, 0.0)
        rec.metrics["analytic_pulse_bound_mol_per_m3"] = float(analytic.max())
    return tx


# ---------------------------------------------------------------------------
# receiver


def _run_receiver(sc: Scenario, rec: RunRecord) -> None:
    env, rxd, g = sc.env, sc.rxd, sc.pulse
    t = _time_grid(sc, g.mu + 8 * g.sigma + rxd.travel(env) + 0.5)
    for m in sc.methods:
        res = reaction4_outlet(rxd, env, g, m, t)
        out = reaction5_output(rxd, env, res)
        rec.traces[f"reaction4_outlet_{m}"] = [res]
        rec.traces[f"output_{m}"] = [out]
        start, end, width = support(out)
        rec.metrics[f"{m}_residual_peak_mol_per_m3"] = res.peak
        rec.metrics[f"{m}_output_plateau_mol_per_m3"] = out.peak
        rec.metrics[f"{m}_output_width_s"] = width
        rec.metrics[f"{m}_output_start_s"] = start
        rec.metrics[f"{m}_output_end_s"] = end
        rec.metrics[f"{m}_two_valued"] = bool(np.all((out.c == 0) | (out.c == rxd.plateau)))
    if sc.outputs.oracle:
        orc = oracle_demodulate(rxd, env, g, float(t[-1]), dx=sc.outputs.dx)
        rec.traces["reaction4_outlet_oracle"] = [orc.residual]
        rec.traces["output_oracle"] = [orc.output]
        rec.metrics["oracle_residual_peak_mol_per_m3"] = orc.residual.peak
        rec.metrics["oracle_output_peak_mol_per_m3"] = orc.output.peak
        for m in sc.methods:
            rec.metrics[f"{m}_residual_linf_vs_oracle"] = _linf(orc.residual, rec.traces[f"reaction4_outlet_{m}"][0])


# ---------------------------------------------------------------------------
# link


def _gauss(t, a, mu, s2):
    return a * np.exp(-((t - mu) ** 2) / (2 * s2))


def fit_gaussian(trace: TimeSeries, lo: float, hi: float) -> tuple[GaussPulse | None, float]:
    """Least-squares Gaussian over ``[lo, hi)``; returns the pulse and the
    max residual relative to the peak."""
    sel = (trace.t >= lo) & (trace.t < hi)
    t, c = trace.t[sel], trace.c[sel]
    if c.size < 5 or c.max() <= 1e-9:
        return None, math.inf
    w = np.clip(c, 0, None)
    mu0 = float(np.sum(w * t) / np.sum(w))
    s20 = float(max(np.sum(w * (t - mu0) ** 2) / np.sum(w), (t[1] - t[0]) ** 2))
    try:
        (a, mu, s2), _ = curve_fit(_gauss, t, c, p0=(c.max(), mu0, s20), maxfev=20000)
    except RuntimeError:
        return None, math.inf
    if not (a > 0 and s2 > 0):
        return None, math.inf
    resid = float(np.max(np.abs(_gauss(t, a, mu, s2) - c)) / c.max())
    return GaussPulse(C0=float(a * math.sqrt(2 * math.pi * s2)), mu=float(mu), sigma2=float(s2)), resid


@dataclass
class LinkResult:
    tx_out: TimeSeries
    channel_out: TimeSeries
    outputs: dict[str, TimeSeries]
    oracle_output: TimeSeries | None
    fits: list[GaussPulse | None]
    fit_residuals: list[float]
    success: list[bool]
    oracle_success: list[bool]
    warnings: list[str]
    windows: list[tuple[float, float]]


def run_link(tx: TransmitterDesign, channel_length: float, rxd: ReceiverDesign, env: FlowEnv,
             bits: Sequence[tuple[float, float]], methods: Sequence[str] = ("appro2",),
             dx: float = 1e-6, dt: float = 1e-3, oracle_receiver: bool = True) -> LinkResult:
    """Transmitter -> straight channel -> receiver for a bit stream."""
    bits = [(float(a), float(b)) for a, b in bits]
    tx_out = generate_pulse(tx, env, bit_stream=bits, dx=dx)
    if channel_length > 0:
        system = SpeciesSystem((Species("Y", tx_out.at),))
        t_max = tx_out.t[-1] + channel_length / env.v_eff
        grid = default_grid(env, channel_length, t_max, dx=dx)
        chan = solve(system, env, grid, [channel_length])[channel_length]["Y"]
    else:
        chan = tx_out
    lag = (math.sqrt(2) * tx.L_Y + tx.L_1 + tx.L_C + tx.L_3 + channel_length) / env.v_eff
    edges = [b[0] + lag for b in bits] + [math.inf]
    t_end = float(chan.t[-1]) + rxd.travel(env) + 1.0
    t = np.arange(0.0, t_end + dt / 2, dt)
    warnings: list[str] = []
    fits, resids = [], []
    for i in range(len(bits)):
        gp, r = fit_gaussian(chan, edges[i] - 0.5 * lag, edges[i + 1] - 0.5 * lag)
        fits.append(gp)
        resids.append(r)
        if gp is None:
            warnings.append(f"bit {i}: no received pulse to fit")
        elif r > FIT_WARN:
            warnings.append(f"bit {i}: Gaussian fit residual {r:.1%} of peak exceeds {FIT_WARN:.0%}; "
                            "analytic receiver path unreliable")
    outputs = {}
    for m in methods:
        c = np.zeros_like(t)
        for gp in fits:
            if gp is None:
                continue
            c = np.maximum(c, demodulate(rxd, env, gp, m, t).c)
        outputs[m] = TimeSeries(t, c, rxd.L_T + 2 * rxd.L_C + rxd.L_4 + rxd.L_5, "analytical",
                                species="O", meta={"method": m})
    windows, success = [], []
    for gp in fits:
        if gp is None:
            windows.append((math.nan, math.nan))
            success.append(False)
            continue
        lo, hi = expected_window(rxd, env, gp)
        windows.append((lo, hi))
        if math.isnan(lo):
            success.append(False)
            continue
        pad = 3 * gp.sigma
        first = next(iter(outputs.values())) if outputs else None
        sel = (t >= lo - pad) & (t <= hi + pad)
        success.append(bool(first is not None and np.any(first.c[sel] == rxd.plateau)))
    oracle_out, oracle_ok = None, []
    if oracle_receiver:
        orc = oracle_demodulate(rxd, env, chan.at, t_end, dx=dx)
        oracle_out = orc.output
        for lo, hi in windows:
            if math.isnan(lo):
                oracle_ok.append(False)
                continue
            sel = (oracle_out.t >= lo - 0.5) & (oracle_out.t <= hi + 0.5)
            oracle_ok.append(bool(np.any(oracle_out.c[sel] >= 0.5 * rxd.plateau)))
    return LinkResult(tx_out=tx_out, channel_out=chan, outputs=outputs, oracle_output=oracle_out,
                      fits=fits, fit_residuals=resids, success=success, oracle_success=oracle_ok,
                      warnings=warnings, windows=windows)


def _run_link(sc: Scenario, rec: RunRecord) -> None:
    tx = _resolve_tx(sc, rec)
    res = run_link(tx, sc.channel_length, sc.rxd, sc.env, sc.bit_stream, sc.methods,
                   dx=sc.outputs.dx, dt=sc.outputs.dt, oracle_receiver=sc.outputs.oracle)
    rec.traces["transmitter_out"] = [res.tx_out]
    rec.traces["channel_out"] = [res.channel_out]
    for m, tr in res.outputs.items():
        rec.traces[f"receiver_out_{m}"] = [tr]
    if res.oracle_output is not None:
        rec.traces["receiver_out_oracle"] = [res.oracle_output]
        rec.metrics["oracle_success"] = res.oracle_success
        rec.metrics["oracle_output_peak_mol_per_m3"] = res.oracle_output.peak
    rec.metrics["L_2_m"] = tx.L_2
    rec.metrics["bits_demodulated"] = res.success
    rec.metrics["fit_residuals"] = [None if math.isinf(r) else r for r in res.fit_residuals]
    rec.metrics["fits"] = [None if g is None else {"C0_mol_s_per_m3": g.C0, "mu_s": g.mu, "sigma2_s2": g.sigma2}
                           for g in res.fits]
    rec.metrics["pulse_peaks_mol_per_m3"] = split_peaks(res.tx_out, sc.bit_stream) if sc.bit_stream else []
    for m, tr in res.outputs.items():
        rec.metrics[f"{m}_output_plateau_mol_per_m3"] = tr.peak
        rec.metrics[f"{m}_two_valued"] = bool(np.all((tr.c == 0) | (tr.c == sc.rxd.plateau)))
        rec.metrics[f"{m}_output_width_s"] = support(tr)[2]
    rec.warnings.extend(res.warnings)


def run(sc: Scenario) -> RunRecord:
    rec = RunRecord(scenario=sc.name, scenario_hash=sc.digest, pipeline=sc.pipeline,
                    tolerances=_tolerances(sc))
    if sc.pipeline == "channel":
        _run_channel(sc, rec)
    elif sc.pipeline == "transmitter":
        _run_transmitter(sc, rec)
    elif sc.pipeline == "receiver":
        _run_receiver(sc, rec)
    else:
        _run_link(sc, rec)
    return rec


def scalar_metrics(metrics: dict) -> dict:
    return {k: v for k, v in metrics.items() if isinstance(v, (int, float))}


def sweep(sc: Scenario, path: str, values: Sequence[float]) -> tuple[list[RunRecord], list[dict]]:
    """One run per value of a scalar scenario field; returns records and table rows."""
    if not values:
        raise ConfigError(f"{sc.source}:0: sweep needs at least one value")
    records, rows = [], []
    for val in values:
        rec = run(with_override(sc, path, val))
        records.append(rec)
        row = {"parameter": path, "value": val}
        row.update(scalar_metrics(rec.metrics))
        rows.append(row)
    return records, rows
