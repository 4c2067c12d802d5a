"""Experiment configuration files.

Grammar: INI sections of ``key = value`` lines, ``#`` or ``;`` comments.
Lists are comma separated; ``inf`` is accepted wherever a number is.

::

    [flow]
    kind = alternating-sine       # steady-shear | alternating-sine | cellular
    seed = 0
    switching_period = 1.0
    amplitude = 1.0               # before budget normalisation
    random_phases = true
    schedule = constant           # constant | powerlaw
    schedule_s = inf

    [budget]
    normalize = true
    p = inf
    s = inf
    horizon = 0                   # 0: use the solver horizon

    [solver]
    n = 128                       # scalar, or one value per kappa
    dt = 0.005                    # scalar, or one value per kappa
    kappa = 1e-3                  # scalar, or a list for sweeps
    horizon = 40                  # scalar, or one value per kappa
    diagnostic_cadence = 20
    snapshot_cadence = 0
    scheme = auto
    dealias = true
    resolution_override = false
    quadrature = quadratic
    lq = 4

    [initial]
    kind = sine                   # sine | random
    kx = 1
    ky = 0
    seed = 0
    modes = 4

    [diagnostics]
    deltas = 0.01
    method = exact                # exact | entropic
    coarse = 32
    fit_window = late             # late | t_a, t_b
    efoldings = 2
    min_r2 = 0.95
    s = inf

    [sweep]
    workers = 1
    dry_run = false
    synthetic_beta = 1.0
    synthetic_c = 1.0

    [output]
    directory = runs
    formats = csv
    export_field_csv = false

Every key has a default, so a file only needs the keys it changes.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass

from .errors import ConfigurationError

__all__ = ["ExperimentConfig", "parse_config", "load_config", "apply_overrides", "SCHEMA"]


def _float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    return float(t)


def _int(text: str) -> int:
    v = int(text.strip(), 0)
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text.strip()


def _list(conv):
    def parse(text: str):
        items = [s for s in (p.strip() for p in text.split(",")) if s]
        if not items:
            raise ValueError("empty list")
        return tuple(conv(s) for s in items)
    return parse


def _window(text: str):
    t = text.strip().lower()
    if t == "late":
        return "late"
    a, b = _list(_float)(t)
    return (a, b)


# section -> key -> (parser, default text)
SCHEMA = {
    "flow": {
        "kind": (_str, "alternating-sine"),
        "seed": (_int, "0"),
        "switching_period": (_float, "1.0"),
        "amplitude": (_float, "1.0"),
        "random_phases": (_bool, "true"),
        "schedule": (_str, "constant"),
        "schedule_s": (_float, "inf"),
    },
    "budget": {
        "normalize": (_bool, "true"),
        "p": (_float, "inf"),
        "s": (_float, "inf"),
        "horizon": (_float, "0"),
    },
    "solver": {
        "n": (_list(_int), "128"),
        "dt": (_list(_float), "0.005"),
        "kappa": (_list(_float), "0.001"),
        "horizon": (_list(_float), "10"),
        "diagnostic_cadence": (_int, "20"),
        "snapshot_cadence": (_int, "0"),
        "scheme": (_str, "auto"),
        "dealias": (_bool, "true"),
        "resolution_override": (_bool, "false"),
        "quadrature": (_str, "quadratic"),
        "lq": (_list(_float), "4"),
    },
    "initial": {
        "kind": (_str, "sine"),
        "kx": (_int, "1"),
        "ky": (_int, "0"),
        "seed": (_int, "0"),
        "modes": (_int, "4"),
    },
    "diagnostics": {
        "deltas": (_list(_float), "0.01"),
        "method": (_str, "exact"),
        "coarse": (_int, "32"),
        "fit_window": (_window, "late"),
        "efoldings": (_float, "2"),
        "min_r2": (_float, "0.95"),
        "s": (_float, "inf"),
    },
    "sweep": {
        "workers": (_int, "1"),
        "dry_run": (_bool, "false"),
        "synthetic_beta": (_float, "1.0"),
        "synthetic_c": (_float, "1.0"),
    },
    "output": {
        "directory": (_str, "runs"),
        "formats": (_list(_str), "csv"),
        "export_field_csv": (_bool, "false"),
    },
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if value == math.inf else repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration: ``sections[name][key]`` holds parsed values."""

    sections: dict

    def __getitem__(self, name: str) -> dict:
        return self.sections[name]

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def to_text(self) -> str:
        """Canonical text form; ``parse_config(c.to_text()) == c``."""
        out = []
        for name in SCHEMA:
            out.append(f"[{name}]")
            for key in SCHEMA[name]:
                out.append(f"{key} = {_fmt(self.sections[name][key])}")
            out.append("")
        return "\n".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_values(self, **updates) -> "ExperimentConfig":
        """Copy with ``section__key=value`` replacements (already parsed values)."""
        sections = {k: dict(v) for k, v in self.sections.items()}
        for dotted, value in updates.items():
            sec, key = dotted.split("__", 1)
            sections[sec][key] = value
        return ExperimentConfig(sections)

    @property
    def kappas(self) -> tuple:
        return self.sections["solver"]["kappa"]

    def per_kappa(self, key: str, index: int):
        """Solver value for the ``index``-th kappa (scalars are shared)."""
        vals = self.sections["solver"][key]
        return vals[0] if len(vals) == 1 else vals[index]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_text() == other.to_text()

    def __hash__(self):
        return hash(self.to_text())


def _key_lines(text: str) -> dict:
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, None)] = no
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


def parse_config(text: str, source: str = "<config>", overrides=()) -> ExperimentConfig:
    """Parse and validate configuration text.

    ``overrides`` are ``section.key=value`` strings applied on top of the
    file.  Errors name the offending line (``source:LINE: message``).
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                   strict=True, default_section="__defaults__")
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}: key outside of any [section]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigurationError(f"{source}:{lineno}: cannot parse {line.strip()!r}") from None
    where = _key_lines(text)

    raw = {name: {k: (d, None) for k, (_, d) in keys.items()} for name, keys in SCHEMA.items()}
    for name in cp.sections():
        sec = name.strip().lower()
        if sec not in SCHEMA:
            raise ConfigurationError(f"{source}:{where.get((sec, None), '?')}: unknown section [{name}]")
        for key, value in cp.items(name):
            if key not in SCHEMA[sec]:
                raise ConfigurationError(
                    f"{source}:{where.get((sec, key), '?')}: unknown key {key!r} in [{sec}] "
                    f"(known: {', '.join(SCHEMA[sec])})")
            raw[sec][key] = (value, f"{source}:{where.get((sec, key), '?')}")
    for ov in overrides:
        sec, key, value = split_override(ov)
        raw[sec][key] = (value, f"--override {ov}")

    parsed = {}
    for sec, keys in SCHEMA.items():
        parsed[sec] = {}
        for key, (conv, _) in keys.items():
            value, origin = raw[sec][key]
            try:
                parsed[sec][key] = conv(value)
            except (ValueError, TypeError) as exc:
                origin = origin or f"{source}: default"
                raise ConfigurationError(f"{origin}: invalid value {value!r} for {sec}.{key} ({exc})") from None
    cfg = ExperimentConfig(parsed)
    _validate(cfg, lambda sec, key: raw[sec][key][1] or f"{source}: default for {sec}.{key}")
    return cfg


def split_override(ov: str):
    m = re.match(r"^\s*([A-Za-z_]+)\.([A-Za-z_]+)\s*=(.*)$", ov)
    if not m:
        raise ConfigurationError(f"--override {ov!r}: expected section.key=value")
    sec, key, value = m.group(1).lower(), m.group(2).lower(), m.group(3).strip()
    if sec not in SCHEMA or key not in SCHEMA[sec]:
        raise ConfigurationError(f"--override {ov!r}: unknown key {sec}.{key}")
    return sec, key, value


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    return parse_config(cfg.to_text(), "<config>", overrides)


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path), overrides)


def _validate(cfg: ExperimentConfig, origin) -> None:
    from .flows import KINDS, SCHEDULES
    from .solver import QUADRATURES, SCHEMES

    def fail(sec, key, msg):
        raise ConfigurationError(f"{origin(sec, key)}: {sec}.{key}: {msg}")

    f = cfg["flow"]
    if f["kind"] not in KINDS or f["kind"] == "custom-streamfunction":
        fail("flow", "kind", f"expected one of steady-shear, alternating-sine, cellular; got {f['kind']!r}")
    if f["schedule"] not in SCHEDULES:
        fail("flow", "schedule", f"expected one of {SCHEDULES}")
    if not f["switching_period"] > 0:
        fail("flow", "switching_period", "must be positive")
    if not f["amplitude"] >= 0:
        fail("flow", "amplitude", "must be nonnegative")
    if f["seed"] < 0 or f["seed"] >= 2**64:
        fail("flow", "seed", "must be an unsigned 64-bit integer")
    b = cfg["budget"]
    for key in ("p", "s"):
        if not b[key] >= 1:
            fail("budget", key, "must be >= 1")
    if b["horizon"] < 0:
        fail("budget", "horizon", "must be nonnegative")
    s = cfg["solver"]
    k = len(s["kappa"])
    for key in ("n", "dt", "horizon"):
        if len(s[key]) not in (1, k):
            fail("solver", key, f"give one value or one per kappa ({k})")
    for n in s["n"]:
        if n < 2 or n & (n - 1):
            fail("solver", "n", f"grid resolution must be a power of two, got {n}")
    if any(not v > 0 for v in s["dt"]):
        fail("solver", "dt", "must be positive")
    if any(not v >= 0 for v in s["kappa"]):
        fail("solver", "kappa", "must be nonnegative")
    if len(set(s["kappa"])) != k:
        fail("solver", "kappa", "values must be distinct")
    if any(not v > 0 for v in s["horizon"]):
        fail("solver", "horizon", "must be positive")
    if s["diagnostic_cadence"] < 1 or s["snapshot_cadence"] < 0:
        fail("solver", "diagnostic_cadence", "cadences are positive step counts")
    if s["scheme"] not in SCHEMES:
        fail("solver", "scheme", f"expected one of {SCHEMES}")
    if s["quadrature"] not in QUADRATURES:
        fail("solver", "quadrature", f"expected one of {QUADRATURES}")
    if any(not 1 < q < math.inf for q in s["lq"]):
        fail("solver", "lq", "exponents must lie in (1, inf)")
    i = cfg["initial"]
    if i["kind"] not in ("sine", "random"):
        fail("initial", "kind", "expected sine or random")
    if i["kind"] == "sine" and i["kx"] == 0 and i["ky"] == 0:
        fail("initial", "kx", "the zero mode is not mean-zero")
    if i["modes"] < 1:
        fail("initial", "modes", "must be positive")
    d = cfg["diagnostics"]
    if any(not v > 0 for v in d["deltas"]):
        fail("diagnostics", "deltas", "must be positive")
    if d["method"] not in ("exact", "entropic"):
        fail("diagnostics", "method", "expected exact or entropic")
    if d["coarse"] < 1 or d["coarse"] > 64:
        fail("diagnostics", "coarse", "must lie in [1, 64]")
    if d["fit_window"] != "late" and not d["fit_window"][0] < d["fit_window"][1]:
        fail("diagnostics", "fit_window", "needs t_a < t_b")
    if not 0 <= d["min_r2"] <= 1:
        fail("diagnostics", "min_r2", "must lie in [0, 1]")
    if cfg["sweep"]["workers"] < 1:
        fail("sweep", "workers", "must be positive")
