import numpy as np
import pytest
from dataclasses import replace

from mcfluidics.errors import ConfigError, DomainError
from mcfluidics.receiver import (ReceiverDesign, default_time_grid, demodulate, expected_window,
                                 oracle_demodulate, reaction4_outlet, support, t_junction_outlet)
from mcfluidics.transport_core import (FlowEnv, GaussPulse, ReactionSpec, TimeSeries,
                                       theorem2_appro1, theorem2_appro2)

PULSE = GaussPulse(3.0, 2.0, 0.25)


@pytest.fixture(scope="module")
def rxd():
    return ReceiverDesign()


def test_design_validation():
    with pytest.raises(ConfigError):
        ReceiverDesign(amp_fraction=0.0)
    with pytest.raises(ConfigError):
        ReceiverDesign(L_4=0.0)
    with pytest.raises(ConfigError):
        ReceiverDesign(C_Amp_VII=-1.0)


def test_junction_halves_and_delays(env, rxd):
    out = t_junction_outlet(rxd, env, PULSE)
    assert out.pulse.C0 == 1.5 and out.pulse.sigma2 == PULSE.sigma2
    assert out.pulse.mu == pytest.approx(2.0 + 100e-6 / 0.002)
    assert out.threshold == 0.25
    with pytest.raises(DomainError):
        t_junction_outlet(rxd, FlowEnv(0.0, 1e-9), PULSE)


@pytest.mark.parametrize("method", ["appro1", "appro2"])
def test_residual_is_half_the_undiluted_response(env, rxd, method):
    t = default_time_grid(rxd, env, PULSE)
    res = reaction4_outlet(rxd, env, PULSE, method, t)
    tl = t - rxd.t_T(env)
    if method == "appro1":
        full = theorem2_appro1(rxd.L_4, tl, env, PULSE, ReactionSpec(rxd.k, rxd.C_ThL_VI))
    else:
        full = theorem2_appro2(rxd.L_4, tl, env, PULSE, rxd.C_ThL_VI).c
    assert np.max(np.abs(res.c - 0.5 * full)) <= 1e-9 * full.max()


def test_appro1_residual_peak(env, rxd):
    res = reaction4_outlet(rxd, env, PULSE, "appro1")
    assert res.peak == pytest.approx(0.5 * (PULSE.peak - rxd.C_ThL_VI), rel=1e-6)


@pytest.mark.parametrize("amp,level", [(3.0, 1.0), (6.0, 2.0), (9.0, 3.0)])
def test_output_plateau_two_valued(env, rxd, amp, level):
    out = demodulate(replace(rxd, C_Amp_VII=amp), env, PULSE)
    assert set(np.unique(out.c)) == {0.0, level}


@pytest.mark.parametrize("method", ["appro1", "appro2"])
def test_width_decreases_with_threshold(env, rxd, method):
    widths = [support(demodulate(replace(rxd, C_ThL_VI=c), env, PULSE, method))[2] for c in (0.25, 0.5, 1.0)]
    assert widths[0] > widths[1] > widths[2] > 0


@pytest.mark.parametrize("thr", [3.0, 3.5, 10.0])
def test_over_threshold_gives_zero(env, rxd, thr):
    for method in ("appro1", "appro2"):
        out = demodulate(replace(rxd, C_ThL_VI=thr), env, PULSE, method)
        assert np.all(out.c == 0)
    assert np.isnan(expected_window(replace(rxd, C_ThL_VI=thr), env, PULSE)[0])


def test_unknown_method(env, rxd):
    with pytest.raises(ConfigError):
        reaction4_outlet(rxd, env, PULSE, "appro3")


def test_output_window_matches_plug_flow(env, rxd):
    lo, hi = expected_window(rxd, env, PULSE)
    start, end, _ = support(demodulate(rxd, env, PULSE, "appro1"))
    # dispersion widens the support by a few diffusion lengths at most
    spread = 4 * np.sqrt(2 * env.D_eff * rxd.travel(env)) / env.v_eff
    assert lo - spread <= start <= lo + 0.05
    assert hi - 0.05 <= end <= hi + spread


def test_support():
    ts = TimeSeries(np.arange(6.0), [0, 0, 1, 1, 0, 0], 0.0, "analytical")
    assert support(ts) == (2.0, 3.0, 2.0)
    assert support(ts, level=5.0)[2] == 0.0


@pytest.fixture(scope="module")
def oracle_rx(env, rxd):
    t_end = default_time_grid(rxd, env, PULSE)[-1]
    return oracle_demodulate(rxd, env, PULSE, t_end, dx=4e-6)


def test_oracle_residual_matches_appro2(env, rxd, oracle_rx):
    res = oracle_rx.residual
    ref = reaction4_outlet(rxd, env, PULSE, "appro2", res.t)
    assert np.max(np.abs(res.c - ref.c)) <= 0.05 * ref.peak


def test_oracle_output_plateau(rxd, oracle_rx):
    out = oracle_rx.output
    assert out.source == "oracle"
    assert out.peak == pytest.approx(rxd.plateau, rel=0.02)
    # both reaction channels close their mass budgets
    for stage in oracle_rx.budget.values():
        for b in stage.values():
            assert b["relative_error"] < 1e-3
