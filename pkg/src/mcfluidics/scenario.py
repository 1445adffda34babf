"""Scenario files: YAML documents with explicit units in every field name.

Validation errors carry the file name and line of the offending node.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError, DomainError
from .receiver import ReceiverDesign
from .transmitter import OptimizerTolerances, SerpentineSpec, TransmitterDesign
from .transport_core import FlowEnv, GaussPulse

SCHEMA_VERSION = 1
BUNDLED_DIR = Path(__file__).parent / "scenarios"


class _Marks:
    """Line numbers of every mapping key and sequence item, keyed by path."""

    def __init__(self, source: str, text: str):
        self.source = source
        self.lines: dict[tuple, int] = {}
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark else 0
            raise ConfigError(f"{source}:{line}: YAML parse error: {exc}") from exc
        if root is not None:
            self._walk(root, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self._walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def line(self, path: tuple) -> int:
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path, 0)

    def error(self, path: tuple, message: str) -> ConfigError:
        where = ".".join(str(p) for p in path) or "<root>"
        return ConfigError(f"{self.source}:{self.line(path)}: {where}: {message}")


@dataclass
class ChannelExperiment:
    """Straight-channel study of the closed-form responses."""

    kind: str
    lengths: list[float]
    C_A0: float
    C_B0: list[float]
    k: float
    T_on: float = 2.0
    mu: float = 2.0
    sigma2: float = 0.25
    methods: list[str] = field(default_factory=lambda: ["appro1", "appro2"])


@dataclass
class Outputs:
    oracle: bool = False
    dt: float = 1e-3
    t_end: float | None = None
    dx: float = 1e-6
    dt_out: float = 1e-2
    optimize: bool = False


@dataclass
class Scenario:
    name: str
    env: FlowEnv
    raw: dict
    source: str
    digest: str
    channel: ChannelExperiment | None = None
    tx: TransmitterDesign | None = None
    rxd: ReceiverDesign | None = None
    pulse: GaussPulse | None = None
    channel_length: float | None = None
    bit_stream: list[tuple[float, float]] = field(default_factory=list)
    outputs: Outputs = field(default_factory=Outputs)
    methods: list[str] = field(default_factory=lambda: ["appro2"])

    @property
    def pipeline(self) -> str:
        if self.channel is not None:
            return "channel"
        if self.tx is not None and self.rxd is not None:
            return "link"
        if self.tx is not None:
            return "transmitter"
        return "receiver"


class _Reader:
    """Typed accessors that raise line-anchored errors."""

    def __init__(self, data: dict, marks: _Marks):
        self.data = data
        self.marks = marks

    def block(self, path: tuple, required: bool = False) -> dict | None:
        node = self.data
        for p in path:
            if not isinstance(node, dict) or p not in node:
                if required:
                    raise self.marks.error(path, "missing required block")
                return None
            node = node[p]
        if not isinstance(node, dict):
            raise self.marks.error(path, "expected a mapping")
        return node

    def number(self, path: tuple, default: Any = ..., allow_none: bool = False) -> float | None:
        node = self.data
        for p in path:
            if not isinstance(node, dict) or p not in node:
                if default is ...:
                    raise self.marks.error(path, "missing required field")
                return default
            node = node[p]
        if node is None and allow_none:
            return None
        if isinstance(node, bool) or not isinstance(node, (int, float)):
            raise self.marks.error(path, f"expected a number, got {node!r}")
        return float(node)

    def number_or_list(self, path: tuple, default: list[float]) -> list[float]:
        node = self.data
        for p in path:
            if not isinstance(node, dict) or p not in node:
                return default
            node = node[p]
        if isinstance(node, list):
            return self.numbers(path)
        return [self.number(path)]

    def flag(self, path: tuple, default: bool) -> bool:
        node = self.data
        for p in path:
            if not isinstance(node, dict) or p not in node:
                return default
            node = node[p]
        if not isinstance(node, bool):
            raise self.marks.error(path, f"expected true/false, got {node!r}")
        return node

    def numbers(self, path: tuple, default: Any = ...) -> list[float]:
        node = self.data
        for p in path:
            if not isinstance(node, dict) or p not in node:
                if default is ...:
                    raise self.marks.error(path, "missing required field")
                return default
            node = node[p]
        if not isinstance(node, list):
            raise self.marks.error(path, "expected a list of numbers")
        out = []
        for i, v in enumerate(node):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise self.marks.error(path + (i,), f"expected a number, got {v!r}")
            out.append(float(v))
        return out

    def check_keys(self, path: tuple, allowed: set[str]) -> None:
        blk = self.block(path)
        if blk is None:
            return
        for key in blk:
            if key not in allowed:
                raise self.marks.error(path + (key,), f"unknown field (allowed: {', '.join(sorted(allowed))})")


_ENV_KEYS = {"v_eff_m_per_s", "D_m2_per_s", "D_eff_m2_per_s", "rho_kg_per_m3", "mu_Pa_s"}
_CHANNEL_KEYS = {"kind", "lengths_m", "C_A0_mol_per_m3", "C_B0_mol_per_m3", "k_m3_per_mol_s",
                 "T_on_s", "mu_s", "sigma2_s2", "methods"}
_SERP_KEYS = {"L21_m", "L22_m", "L23_m", "Ls_m", "Hs_m", "delay_lines", "L_2_m"}
_TX_KEYS = {"L_Y_m", "L_1_m", "L_3_m", "L_C_m", "serpentine", "C_Sy0_I_mol_per_m3",
            "C_X0_II_mol_per_m3", "C_X0_III_mol_per_m3", "C_Sp0_IV_mol_per_m3",
            "k_m3_per_mol_s", "T_on_s", "tolerances"}
_TOL_KEYS = {"zeta", "delta_mol_per_m3_s", "epsilon_mol_per_m3", "tau_mol_per_m3"}
_RX_KEYS = {"L_T_m", "L_C_m", "L_4_m", "L_5_m", "C_ThL_VI_mol_per_m3", "C_Amp_VII_mol_per_m3",
            "k_m3_per_mol_s", "presence_tau_mol_per_m3", "amp_fraction", "methods"}
_PULSE_KEYS = {"C0_mol_s_per_m3", "mu_s", "sigma2_s2"}
_OUT_KEYS = {"oracle", "dt_s", "t_end_s", "dx_m", "dt_out_s", "optimize"}
_TOP_KEYS = {"schema_version", "name", "env", "channel", "tx", "rxd", "pulse",
             "channel_length_m", "bit_stream_s", "outputs"}


def _build(data: dict, marks: _Marks, source: str, digest: str) -> Scenario:
    if not isinstance(data, dict):
        raise marks.error((), "scenario must be a mapping")
    rd = _Reader(data, marks)
    rd.check_keys((), _TOP_KEYS)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise marks.error(("schema_version",), f"unsupported schema version {version!r}")
    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise marks.error(("name",), "scenario needs a non-empty string name")

    rd.check_keys(("env",), _ENV_KEYS)
    rd.block(("env",), required=True)
    try:
        env = FlowEnv(v_eff=rd.number(("env", "v_eff_m_per_s")), D=rd.number(("env", "D_m2_per_s")),
                      D_eff=rd.number(("env", "D_eff_m2_per_s"), None),
                      rho=rd.number(("env", "rho_kg_per_m3"), None),
                      mu=rd.number(("env", "mu_Pa_s"), None))
        env.require_flow()
    except DomainError as exc:
        raise marks.error(("env",), str(exc)) from exc

    sc = Scenario(name=name, env=env, raw=data, source=source, digest=digest)

    if rd.block(("channel",)) is not None:
        rd.check_keys(("channel",), _CHANNEL_KEYS)
        kind = data["channel"].get("kind")
        if kind not in ("rect", "gauss"):
            raise marks.error(("channel", "kind"), "kind must be 'rect' or 'gauss'")
        methods = data["channel"].get("methods", ["appro1", "appro2"])
        if not isinstance(methods, list) or any(m not in ("appro1", "appro2") for m in methods):
            raise marks.error(("channel", "methods"), "methods must be a list of appro1/appro2")
        sc.channel = ChannelExperiment(
            kind=kind, lengths=rd.numbers(("channel", "lengths_m")),
            C_A0=rd.number(("channel", "C_A0_mol_per_m3")),
            C_B0=rd.number_or_list(("channel", "C_B0_mol_per_m3"), [0.0]),
            k=rd.number(("channel", "k_m3_per_mol_s"), 0.0),
            T_on=rd.number(("channel", "T_on_s"), 2.0),
            mu=rd.number(("channel", "mu_s"), 2.0),
            sigma2=rd.number(("channel", "sigma2_s2"), 0.25),
            methods=list(methods))
        for i, L in enumerate(sc.channel.lengths):
            if L < 0:
                raise marks.error(("channel", "lengths_m", i), "lengths must be >= 0")

    if rd.block(("tx",)) is not None:
        rd.check_keys(("tx",), _TX_KEYS)
        rd.check_keys(("tx", "serpentine"), _SERP_KEYS)
        rd.check_keys(("tx", "tolerances"), _TOL_KEYS)
        serp = None
        if rd.block(("tx", "serpentine")) is not None:
            p = ("tx", "serpentine")
            n = data["tx"]["serpentine"].get("delay_lines", 2)
            if not isinstance(n, int) or isinstance(n, bool):
                raise marks.error(p + ("delay_lines",), "delay_lines must be an integer")
            try:
                serp = SerpentineSpec(
                    L21=rd.number(p + ("L21_m",), 0.0), L22=rd.number(p + ("L22_m",), 0.0),
                    L23=rd.number(p + ("L23_m",), 0.0), Ls=rd.number(p + ("Ls_m",), 0.0),
                    Hs=rd.number(p + ("Hs_m",), 0.0), delay_lines=n,
                    L_2=rd.number(p + ("L_2_m",), None))
            except ConfigError as exc:
                raise marks.error(p, str(exc)) from exc
        p = ("tx", "tolerances")
        try:
            tol = OptimizerTolerances(
                zeta=rd.number(p + ("zeta",), 1.0), delta=rd.number(p + ("delta_mol_per_m3_s",), 0.13),
                epsilon=rd.number(p + ("epsilon_mol_per_m3",), 1e-3),
                tau=rd.number(p + ("tau_mol_per_m3",), 1e-3))
            sc.tx = TransmitterDesign(
                L_Y=rd.number(("tx", "L_Y_m")), L_1=rd.number(("tx", "L_1_m")),
                L_3=rd.number(("tx", "L_3_m")), L_C=rd.number(("tx", "L_C_m")),
                serpentine=serp,
                C_Sy0_I=rd.number(("tx", "C_Sy0_I_mol_per_m3"), 3.0),
                C_X0_II=rd.number(("tx", "C_X0_II_mol_per_m3"), 3.0),
                C_X0_III=rd.number(("tx", "C_X0_III_mol_per_m3"), 4.0),
                C_Sp0_IV=rd.number(("tx", "C_Sp0_IV_mol_per_m3"), 4.0),
                k=rd.number(("tx", "k_m3_per_mol_s"), 400.0),
                T_on=rd.number(("tx", "T_on_s"), 2.0), tolerances=tol)
        except ConfigError as exc:
            if str(exc).startswith(source):
                raise
            raise marks.error(("tx",), str(exc)) from exc

    if rd.block(("rxd",)) is not None:
        rd.check_keys(("rxd",), _RX_KEYS)
        p = ("rxd",)
        methods = data["rxd"].get("methods", ["appro2"])
        if not isinstance(methods, list) or any(m not in ("appro1", "appro2") for m in methods):
            raise marks.error(p + ("methods",), "methods must be a list of appro1/appro2")
        sc.methods = list(methods)
        try:
            sc.rxd = ReceiverDesign(
                L_T=rd.number(p + ("L_T_m",), 80e-6), L_C=rd.number(p + ("L_C_m",), 20e-6),
                L_4=rd.number(p + ("L_4_m",), 520e-6), L_5=rd.number(p + ("L_5_m",), 470e-6),
                C_ThL_VI=rd.number(p + ("C_ThL_VI_mol_per_m3",)),
                C_Amp_VII=rd.number(p + ("C_Amp_VII_mol_per_m3",)),
                k=rd.number(p + ("k_m3_per_mol_s",), 400.0),
                presence_tau=rd.number(p + ("presence_tau_mol_per_m3",), 1e-3),
                amp_fraction=rd.number(p + ("amp_fraction",), 1.0 / 3.0))
        except ConfigError as exc:
            if str(exc).startswith(source):
                raise
            raise marks.error(p, str(exc)) from exc

    if rd.block(("pulse",)) is not None:
        rd.check_keys(("pulse",), _PULSE_KEYS)
        try:
            sc.pulse = GaussPulse(rd.number(("pulse", "C0_mol_s_per_m3")), rd.number(("pulse", "mu_s")),
                                  rd.number(("pulse", "sigma2_s2")))
        except DomainError as exc:
            raise marks.error(("pulse",), str(exc)) from exc

    sc.channel_length = rd.number(("channel_length_m",), None)
    if sc.channel_length is not None and sc.channel_length < 0:
        raise marks.error(("channel_length_m",), "must be >= 0")

    bits = data.get("bit_stream_s", None)
    if bits is not None:
        if not isinstance(bits, list):
            raise marks.error(("bit_stream_s",), "expected a list of [onset, T_on] pairs")
        prev = -float("inf")
        for i, b in enumerate(bits):
            if (not isinstance(b, list) or len(b) != 2
                    or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in b)):
                raise marks.error(("bit_stream_s", i), "each bit is [onset_s, T_on_s]")
            onset, T_on = float(b[0]), float(b[1])
            if onset <= prev:
                raise marks.error(("bit_stream_s", i), "bit onsets must be strictly increasing")
            if onset < 0 or T_on <= 0:
                raise marks.error(("bit_stream_s", i), "onset must be >= 0 and T_on > 0")
            prev = onset
            sc.bit_stream.append((onset, T_on))
    elif sc.tx is not None:
        sc.bit_stream = [(0.0, sc.tx.T_on)]

    rd.check_keys(("outputs",), _OUT_KEYS)
    p = ("outputs",)
    sc.outputs = Outputs(oracle=rd.flag(p + ("oracle",), False), dt=rd.number(p + ("dt_s",), 1e-3),
                         t_end=rd.number(p + ("t_end_s",), None), dx=rd.number(p + ("dx_m",), 1e-6),
                         dt_out=rd.number(p + ("dt_out_s",), 1e-2),
                         optimize=rd.flag(p + ("optimize",), False))
    for key, val in (("dt_s", sc.outputs.dt), ("dx_m", sc.outputs.dx), ("dt_out_s", sc.outputs.dt_out)):
        if not val > 0:
            raise marks.error(p + (key,), "must be > 0")

    if sc.channel is None and sc.tx is None and sc.rxd is None:
        raise marks.error((), "scenario needs at least one of channel, tx or rxd")
    if sc.pipeline == "receiver" and sc.pulse is None:
        raise marks.error(("rxd",), "a receiver-only scenario needs a pulse block")
    if sc.pipeline == "link" and sc.channel_length is None:
        raise marks.error((), "a link scenario needs channel_length_m")
    return sc


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    marks = _Marks(source, text)
    data = yaml.safe_load(text)
    digest = hashlib.sha256(text.encode()).hexdigest()
    return _build(data, marks, source, digest)


def resolve_path(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = BUNDLED_DIR / f"{name_or_path}.yaml"
    if bundled.exists():
        return bundled
    raise ConfigError(f"{name_or_path}:0: scenario file not found")


def load_scenario(name_or_path: str | Path) -> Scenario:
    path = resolve_path(name_or_path)
    return parse_scenario(path.read_text(), str(path))


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.yaml"))


def with_override(sc: Scenario, dotted: str, value: float) -> Scenario:
    """Copy of ``sc`` with one scalar field replaced (dotted path into the YAML)."""
    data = copy.deepcopy(sc.raw)
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{sc.source}:0: {dotted}: no such element") from exc
            continue
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"{sc.source}:0: {dotted}: no such block")
        node = node[p]
    last = parts[-1]
    if isinstance(node, list):
        try:
            idx = int(last)
            current = node[idx]
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{sc.source}:0: {dotted}: no such element") from exc
    else:
        if not isinstance(node, dict) or last not in node:
            raise ConfigError(f"{sc.source}:0: {dotted}: no such field")
        current = node[last]
        idx = last
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ConfigError(f"{sc.source}:0: {dotted}: sweep target must be a scalar number, "
                          f"found {type(current).__name__}")
    node[idx] = value
    text = yaml.safe_dump(data, sort_keys=False)
    out = parse_scenario(text, sc.source)
    out.digest = hashlib.sha256((sc.digest + f"|{dotted}={value!r}").encode()).hexdigest()
    return out
