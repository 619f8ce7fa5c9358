"""INI run configuration with typed sections, defaults and strict key checking.

Example::

    [physics]
    d = 1.0
    nu0 = 1.0

    [space]
    cells = 64

Every key is optional.  Unknown sections or keys, malformed values and
out-of-range numbers raise :class:`ConfigError` naming the line and field.
"""

import configparser
import re
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

MODES = ("coefficients", "simulate-sohb", "simulate-sokb", "limit-study", "verify")


@dataclass
class RunSection:
    seed: int = 0
    output: str = "out"


@dataclass
class PhysicsSection:
    d: float = 1.0
    nu0: float = 1.0


@dataclass
class So3Section:
    n_alpha: int = 25
    n_beta: int = 12
    n_gamma: int = 25


@dataclass
class SpaceSection:
    dim: int = 1
    cells: int = 64
    L: float = 1.0
    direction: tuple = (1.0, 0.0, 0.0)


@dataclass
class ThetaSection:
    n: int = 4096


@dataclass
class TimeSection:
    T: float = 0.5
    cfl: float = 0.4
    dt: float = 0.0  # 0 selects a default (CFL for SOHB, dx for SOKB)
    output_every: int = 10


@dataclass
class InitialSection:
    preset: str = "twist-lambda"
    rho0: float = 1.0
    rho_amp: float = 0.2
    amplitude: float = 0.5
    wavenumber: int = 1
    width: float = 0.1
    axis: tuple = (1.0, 0.0, 0.0)


@dataclass
class SohbSection:
    form: str = "stereo"
    scheme: str = "central"
    integrator: str = "rk2"
    dissipation: bool = True


@dataclass
class SokbSection:
    eps: float = 0.1
    transport: str = "spectral"
    max_picard: int = 2
    initial: str = "well-prepared"
    f_R_preset: str = "zero"
    f_R_amplitude: float = 0.1


@dataclass
class LimitSection:
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    T: float = 0.25
    output_interval: float = 0.05
    dt_ratio: float = 0.25
    reference_refine: int = 4
    reference_cfl: float = 0.2
    allow_negative_margin: bool = False
    parallel: int = 1


@dataclass
class CoefficientsSection:
    nu0_list: tuple = ()


@dataclass
class VerifySection:
    long: bool = False


SECTIONS = {
    "run": RunSection,
    "physics": PhysicsSection,
    "so3": So3Section,
    "space": SpaceSection,
    "theta": ThetaSection,
    "time": TimeSection,
    "initial": InitialSection,
    "sohb": SohbSection,
    "sokb": SokbSection,
    "limit": LimitSection,
    "coefficients": CoefficientsSection,
    "verify": VerifySection,
}

CHOICES = {
    ("initial", "preset"): ("constant", "gaussian-bump-rho", "twist-lambda"),
    ("sohb", "form"): ("stereo", "frame"),
    ("sohb", "scheme"): ("central", "spectral"),
    ("sohb", "integrator"): ("rk2", "rk4"),
    ("sokb", "transport"): ("spectral", "upwind"),
    ("sokb", "initial"): ("well-prepared", "equilibrium"),
    ("sokb", "f_R_preset"): ("zero", "mass", "fluctuation"),
}

POSITIVE = {
    ("physics", "d"), ("physics", "nu0"), ("so3", "n_alpha"), ("so3", "n_beta"), ("so3", "n_gamma"),
    ("space", "cells"), ("space", "L"), ("space", "dim"), ("theta", "n"), ("time", "T"), ("time", "cfl"),
    ("time", "output_every"), ("sokb", "eps"), ("sokb", "max_picard"), ("limit", "T"),
    ("limit", "output_interval"), ("limit", "dt_ratio"), ("limit", "reference_refine"),
    ("limit", "reference_cfl"), ("limit", "parallel"), ("limit", "eps_list"), ("coefficients", "nu0_list"),
}


@dataclass
class RunConfig:
    mode: str = "coefficients"
    run: RunSection = field(default_factory=RunSection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    so3: So3Section = field(default_factory=So3Section)
    space: SpaceSection = field(default_factory=SpaceSection)
    theta: ThetaSection = field(default_factory=ThetaSection)
    time: TimeSection = field(default_factory=TimeSection)
    initial: InitialSection = field(default_factory=InitialSection)
    sohb: SohbSection = field(default_factory=SohbSection)
    sokb: SokbSection = field(default_factory=SokbSection)
    limit: LimitSection = field(default_factory=LimitSection)
    coefficients: CoefficientsSection = field(default_factory=CoefficientsSection)
    verify: VerifySection = field(default_factory=VerifySection)
    source: str = ""

    def as_dict(self):
        return asdict(self)


def _locate(lines, section, key=None):
    """1-based line number of ``[section]`` or of ``key`` inside it (0 if unknown)."""
    current = None
    for i, line in enumerate(lines, 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section:
            m = re.match(r"^([^=:#;]+?)\s*[=:]", s)
            if m and m.group(1).strip().lower() == key.lower():
                return i
    return 0


def _convert(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in re.split(r"[,\s]+", raw) if p]
            return tuple(float(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_value(sec, key, value, where):
    if (sec, key) in CHOICES and value not in CHOICES[(sec, key)]:
        raise ConfigError(f"{where}: {value!r} not one of {', '.join(CHOICES[(sec, key)])}")
    if (sec, key) in POSITIVE:
        vals = value if isinstance(value, tuple) else (value,)
        if any(not (v > 0) for v in vals):
            raise ConfigError(f"{where}: must be positive, got {value!r}")
    if isinstance(value, float) and value != value:
        raise ConfigError(f"{where}: NaN is not allowed")


def _validate(cfg: RunConfig, lines, path):
    def where(sec, key):
        return f"{path}:{_locate(lines, sec, key)}: [{sec}] {key}"

    if cfg.space.dim not in (1, 3):
        raise ConfigError(f"{where('space', 'dim')}: must be 1 or 3")
    if cfg.space.cells < 16:
        raise ConfigError(f"{where('space', 'cells')}: at least 16 cells are required")
    for key in ("direction",):
        if len(getattr(cfg.space, key)) != 3:
            raise ConfigError(f"{where('space', key)}: needs three components")
    if len(cfg.initial.axis) != 3:
        raise ConfigError(f"{where('initial', 'axis')}: needs three components")
    if cfg.so3.n_alpha % 2 == 0 or cfg.so3.n_gamma % 2 == 0:
        raise ConfigError(f"{where('so3', 'n_alpha')}: n_alpha and n_gamma must be odd")
    if min(cfg.so3.n_alpha, cfg.so3.n_gamma) < 9 or cfg.so3.n_beta < 4:
        raise ConfigError(f"{where('so3', 'n_beta')}: grid too coarse (need n_alpha, n_gamma >= 9, n_beta >= 4)")
    if cfg.theta.n < 64:
        raise ConfigError(f"{where('theta', 'n')}: at least 64 nodes are required")
    if cfg.time.dt < 0:
        raise ConfigError(f"{where('time', 'dt')}: must be nonnegative")
    eps = cfg.limit.eps_list
    if len(eps) < 3 or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError(f"{where('limit', 'eps_list')}: needs at least 3 strictly decreasing values")
    if cfg.initial.preset == "gaussian-bump-rho" and not cfg.initial.width > 0:
        raise ConfigError(f"{where('initial', 'width')}: must be positive")
    if cfg.initial.rho0 - abs(cfg.initial.rho_amp) <= 0 and cfg.initial.preset == "twist-lambda":
        raise ConfigError(f"{where('initial', 'rho_amp')}: initial density would not be positive")
    if cfg.initial.rho0 <= 0:
        raise ConfigError(f"{where('initial', 'rho0')}: must be positive")


def parse_config_text(text, mode="coefficients", path="<config>") -> RunConfig:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    lines = text.splitlines()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                       default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", 0)
        raise ConfigError(f"{path}:{line}: malformed configuration: {exc.message if hasattr(exc, 'message') else exc}") from None
    cfg = RunConfig(mode=mode, source=path)
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{path}:{_locate(lines, sec)}: unknown section [{sec}]")
        obj = getattr(cfg, sec)
        known = {f.name: f for f in fields(obj)}
        for key, raw in parser.items(sec):
            w = f"{path}:{_locate(lines, sec, key)}: [{sec}] {key}"
            if key not in known:
                raise ConfigError(f"{w}: unknown key")
            value = _convert(raw, getattr(obj, key), w)
            _check_value(sec, key, value, w)
            setattr(obj, key, value)
    _validate(cfg, lines, path)
    return cfg


def parse_config(path, mode="coefficients") -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, mode, str(path))
