"""Run configuration: dataclasses plus a strict INI reader/writer.

The file format is plain INI with one section per concern::

    [topology]
    family = geometric
    n = 20

Every key must be known; unknown keys and sections raise ConfigError.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .topology import THETA_MODES

ESTIMATORS = ("Ep", "E1", "E2", "E3", "E4")
SIGNAL_KINDS = ("multisine", "piecewise", "constant", "ramp")
FAMILIES = ("geometric", "line", "cayley", "star", "file")
STABILITY_TARGETS = ("spectral", "literal")


@dataclass
class TopologyConfig:
    family: str = "geometric"
    n: int = 20
    side: float | None = None
    radius: float | None = None
    generators: tuple = (1, 3, 4)
    path: str = ""

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"topology.family must be one of {FAMILIES}")
        if self.n < 1:
            raise ConfigError("topology.n must be >= 1")
        if self.family == "file" and not self.path:
            raise ConfigError("topology.path is required for family = file")


@dataclass
class ChannelConfig:
    q: float = 0.1
    jitter: float = 0.05
    symmetric_losses: bool = False

    def validate(self):
        if not 0 <= self.q <= 1:
            raise ConfigError("channel.q must lie in [0, 1]")
        if self.jitter < 0:
            raise ConfigError("channel.jitter must be >= 0")


@dataclass
class SignalSpec:
    kind: str = "multisine"
    freq_scale: float = 1.0
    amplitude: float = 1.0
    length: int = 300
    slope: float = 0.05
    level: float = 0.0
    seed: int = 0

    def validate(self):
        if self.kind not in SIGNAL_KINDS:
            raise ConfigError(f"signal.kind must be one of {SIGNAL_KINDS}")
        if self.freq_scale <= 0:
            raise ConfigError("signal.freq_scale must be positive")
        if self.length < 2:
            raise ConfigError("signal.length must be >= 2")


@dataclass
class EstimatorConfig:
    sigma2: float = 1.5
    upsilon_db: float = 0.0
    delta_inflation: float = 1.05
    gamma_max: float | None = None
    gamma_max_cap: float = 0.99
    stability_target: str = "spectral"
    theta_mode: str = "two_hop"
    forgetting: float = 0.96
    noise_correction: bool = True
    bisection_tol: float = 1e-10
    threshold_tol: float = 1e-10
    threshold_max_iter: int = 10_000
    thresholds_under_losses: bool = False

    def validate(self):
        if self.sigma2 < 0:
            raise ConfigError("estimator.sigma2 must be >= 0")
        if self.gamma_max is not None and not 0 < self.gamma_max < 1:
            raise ConfigError("estimator.gamma_max must lie in (0, 1)")
        if not 0 < self.gamma_max_cap < 1:
            raise ConfigError("estimator.gamma_max_cap must lie in (0, 1)")
        if self.stability_target not in STABILITY_TARGETS:
            raise ConfigError(f"estimator.stability_target must be one of {STABILITY_TARGETS}")
        if self.theta_mode not in THETA_MODES:
            raise ConfigError(f"estimator.theta_mode must be one of {THETA_MODES}")
        if not 0 <= self.forgetting <= 1:
            raise ConfigError("estimator.forgetting must lie in [0, 1]")
        if self.bisection_tol <= 0 or self.threshold_tol <= 0:
            raise ConfigError("tolerances must be positive")


@dataclass
class RunConfig:
    estimators: tuple = ESTIMATORS
    trials: int = 30
    warmup: int = 70
    seed: int = 0

    def validate(self):
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"run.estimators must be a non-empty subset of {ESTIMATORS}")
        if self.trials < 1:
            raise ConfigError("run.trials must be >= 1")
        if self.warmup < 0:
            raise ConfigError("run.warmup must be >= 0")


@dataclass
class BenchConfig:
    freq_scales: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)
    q_levels: tuple = (0.0, 0.1, 0.2, 0.3)

    def validate(self):
        if not self.freq_scales or not self.q_levels:
            raise ConfigError("bench grid must be non-empty")


@dataclass
class SimConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    signal: SignalSpec = field(default_factory=SignalSpec)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    run: RunConfig = field(default_factory=RunConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def validate(self) -> "SimConfig":
        for f in fields(self):
            getattr(self, f.name).validate()
        if self.run.warmup >= self.signal.length - 1:
            raise ConfigError("run.warmup must be smaller than signal.length - 1")
        return self

    def replace(self, **sections) -> "SimConfig":
        """Copy with some fields of some sections replaced.

        ``cfg.replace(signal={"freq_scale": 2.0})``
        """
        out = {}
        for f in fields(self):
            sec = getattr(self, f.name)
            upd = sections.pop(f.name, None)
            out[f.name] = dataclasses.replace(sec, **upd) if upd else dataclasses.replace(sec)
        if sections:
            raise ConfigError(f"unknown sections: {sorted(sections)}")
        return SimConfig(**out)


# --- text format ----------------------------------------------------------------


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            if default and isinstance(default[0], int) and not isinstance(default[0], bool):
                return tuple(int(t) for t in items)
            return tuple(float(t) for t in items)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            val = float(text)
            if not math.isfinite(val):
                raise ValueError(text)
            return val
        if isinstance(default, str):
            return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"unsupported type for {key}")


# keys whose default is None: (type used when a value is given)
_OPTIONAL_FLOATS = {("topology", "side"), ("topology", "radius"), ("estimator", "gamma_max")}


def config_from_dict(data: dict) -> SimConfig:
    cfg = SimConfig()
    known = {f.name: f for f in fields(cfg)}
    for section, values in data.items():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
        sec = getattr(cfg, section)
        sec_fields = {f.name: f for f in fields(sec)}
        for key, raw in values.items():
            if key not in sec_fields:
                raise ConfigError(f"unknown key {section}.{key}")
            default = getattr(sec, key)
            name = f"{section}.{key}"
            if (section, key) in _OPTIONAL_FLOATS:
                val = None if str(raw).strip().lower() in ("auto", "none", "") else _parse(str(raw), 0.0, name)
            elif isinstance(raw, str):
                val = _parse(raw, default, name)
            else:
                val = tuple(raw) if isinstance(default, tuple) else raw
            setattr(sec, key, val)
    return cfg.validate()


def config_to_dict(cfg: SimConfig) -> dict:
    return {f.name: {k.name: _format(getattr(getattr(cfg, f.name), k.name))
                     for k in fields(getattr(cfg, f.name))}
            for f in fields(cfg)}


def loads(text: str) -> SimConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_dict({s: dict(parser[s]) for s in parser.sections()})


def dumps(cfg: SimConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_dict(config_to_dict(cfg))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load(path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text)


def bundled_config(name: str) -> SimConfig:
    from importlib import resources

    text = resources.files("wsn_estimation").joinpath("configs", f"{name}.cfg").read_text()
    return loads(text)
