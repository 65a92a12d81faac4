"""Experiment configuration: INI files with sections, overridden by command-line flags.

Example::

    [experiment]
    command = relax-scan
    seed = 7
    out = results

    [sampler]
    name = srw-uniform
    gamma = preset

    [grid]
    n = 8, 16, 32, 64

    [run]
    horizon_factor = 1000
    replicas = 4
    observable = mode(1)
    start = stationary    # sample only; default cold (flat profile, site 0)
"""
from __future__ import annotations

import configparser
import io
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .lattice import DomainError
from .relax import STARTS, Observable, SamplerConfig, gamma_preset

COMMANDS = ("sample", "relax-scan", "compare", "verify-lift", "verify-invariant")
METHODS = ("StationaryAutocorr", "EnsembleDecay")
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line, self.source = line, source
        where = ""
        if source and line:
            where = f"{source}:{line}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)


# (section, key, attribute, kind)
SCHEMA = [
    ("experiment", "command", "command", "str"),
    ("experiment", "seed", "seed", "int"),
    ("experiment", "out", "out", "str"),
    ("experiment", "workers", "workers", "optint"),
    ("sampler", "name", "samplers", "strlist"),
    ("sampler", "gamma", "gamma", "str"),
    ("sampler", "gamma_c", "gamma_c", "float"),
    ("sampler", "beta", "beta", "float"),
    ("grid", "n", "n_grid", "intlist"),
    ("run", "horizon", "horizon", "optfloat"),
    ("run", "horizon_factor", "horizon_factor", "float"),
    ("run", "replicas", "replicas", "int"),
    ("run", "observer_dt", "observer_dt", "optfloat"),
    ("run", "observable", "observable", "str"),
    ("run", "start", "start", "str"),
    ("run", "method", "method", "str"),
    ("run", "log_events", "log_events", "int"),
    ("verify", "mc_budget", "mc_budget", "int"),
    ("verify", "battery_size", "battery_size", "int"),
    ("verify", "corrupt_rates", "corrupt_rates", "bool"),
    ("compare", "ecmc_n", "compare_ecmc_n", "intlist"),
    ("compare", "hmc_n", "compare_hmc_n", "intlist"),
]


@dataclass
class ExperimentConfig:
    command: str = "sample"
    seed: int = 0
    out: str = "out"
    workers: int | None = None
    samplers: list[str] = field(default_factory=lambda: ["srw"])
    gamma: str = "0"  # number or "preset"
    gamma_c: float = 1.0
    beta: float = 1.0
    n_grid: list[int] = field(default_factory=lambda: [8])
    horizon: float | None = None  # explicit horizon wins over horizon_factor
    horizon_factor: float = 1000.0  # multiples of the anticipated relaxation time
    replicas: int = 4
    observer_dt: float | None = None
    observable: str = "mode(1)"
    start: str = "cold"  # initial condition for `sample`; estimators always start stationary
    method: str = "StationaryAutocorr"
    log_events: int = 0
    mc_budget: int = 100_000
    battery_size: int = 20
    corrupt_rates: bool = False
    compare_ecmc_n: list[int] = field(default_factory=list)
    compare_hmc_n: list[int] = field(default_factory=list)
    lines: dict = field(default_factory=dict, repr=False, compare=False)
    source: str | None = field(default=None, repr=False, compare=False)

    # --- derived quantities ---
    def gamma_for(self, sampler: str, n: int) -> float:
        g = self.gamma.strip()
        if g != "preset":
            return float(g)
        if sampler.startswith(("srw-uniform", "ecmc")):
            return gamma_preset(n, "uniform", self.gamma_c)
        if sampler.startswith("srw-neighbor"):
            return gamma_preset(n, "neighbor", self.gamma_c)
        if sampler.startswith("hmc"):
            return self.gamma_c / n
        return 0.0

    def sampler_config(self, sampler: str, n: int) -> SamplerConfig:
        return SamplerConfig.parse(sampler, n, self.gamma_for(sampler, n), self.beta)

    def horizon_for(self, cfg: SamplerConfig) -> float:
        return self.horizon if self.horizon is not None else self.horizon_factor * cfg.anticipated_t_rel()

    # --- validation ---
    def _fail(self, msg: str, key: str):
        raise ConfigError(msg, self.lines.get(key), self.source)

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            self._fail(f"unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}", "command")
        if not self.n_grid:
            self._fail("n grid is empty", "n_grid")
        if any(n < 3 for n in self.n_grid):
            self._fail(f"every n must be at least 3, got {self.n_grid}", "n_grid")
        if not self.samplers:
            self._fail("no sampler given", "samplers")
        if self.horizon is not None and not self.horizon > 0:
            self._fail(f"horizon must be positive, got {self.horizon:g}", "horizon")
        if not self.horizon_factor > 0:
            self._fail("horizon_factor must be positive", "horizon_factor")
        if self.replicas < 1:
            self._fail("replicas must be at least 1", "replicas")
        if self.observer_dt is not None and not self.observer_dt > 0:
            self._fail("observer_dt must be positive", "observer_dt")
        if self.workers is not None and self.workers < 1:
            self._fail("workers must be at least 1", "workers")
        if self.start not in STARTS:
            self._fail(f"start must be one of {', '.join(STARTS)}, got {self.start!r}", "start")
        if self.method not in METHODS:
            self._fail(f"unknown method {self.method!r}", "method")
        if self.mc_budget < 2:
            self._fail("mc_budget must be at least 2", "mc_budget")
        try:
            Observable.parse(self.observable)
        except DomainError as exc:
            self._fail(str(exc), "observable")
        if self.gamma.strip() != "preset":
            try:
                float(self.gamma)
            except ValueError:
                self._fail(f"gamma must be a number or 'preset', got {self.gamma!r}", "gamma")
        for s in self.samplers:
            for n in self.n_grid:
                try:
                    self.sampler_config(s, n)
                except DomainError as exc:
                    key = "gamma" if "refresh" in str(exc) else "samplers"
                    self._fail(f"sampler {s!r} at n={n}: {exc}", key)
        if self.command == "sample" and (len(self.samplers) != 1 or len(self.n_grid) != 1):
            self._fail("sample needs exactly one sampler and one n", "samplers")
        if self.command == "compare":
            fam = [_family(s) for s in self.samplers]
            if sorted(fam) != ["ecmc", "hmc"]:
                self._fail("compare needs one ECMC-family (ecmc/srw) and one HMC-family sampler", "samplers")
            if self.compare_ecmc_n and self.compare_hmc_n and self.compare_ecmc_n != self.compare_hmc_n:
                self._fail(f"mismatched grids: {self.compare_ecmc_n} vs {self.compare_hmc_n}", "compare_hmc_n")
        if self.command.startswith("verify") and max(self.n_grid) > 64:
            self._fail("verification runs are limited to n <= 64", "n_grid")
        return self

    # --- (de)serialization ---
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, key, attr, kind in SCHEMA:
            value = getattr(self, attr)
            if value is None or (kind == "intlist" and not value and section == "compare"):
                continue
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, key, _format(value, kind))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("lines"), d.pop("source")
        return d


def _family(s: str) -> str:
    return "hmc" if s.startswith("hmc") else "ecmc" if s.startswith(("ecmc", "srw")) else "other"


def _format(value, kind: str) -> str:
    if kind in ("intlist", "strlist"):
        return ", ".join(str(v) for v in value)
    if kind in ("float", "optfloat"):
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


def _convert(raw: str, kind: str):
    raw = raw.strip()
    if kind == "str":
        return raw
    if kind == "int":
        return _int(raw)
    if kind == "optint":
        return None if raw.lower() in ("", "auto", "none") else int(raw)
    if kind == "float":
        return float(raw)
    if kind == "optfloat":
        return None if raw.lower() in ("", "auto", "none") else float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "intlist":
        return [_int(v) for v in re.split(r"[,\s]+", raw) if v]
    if kind == "strlist":
        return [v.strip() for v in split_top(raw) if v.strip()]
    raise AssertionError(kind)


def _int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        v = float(raw)  # accepts 1e5
        if not v.is_integer():
            raise ValueError(f"not an integer: {raw!r}") from None
        return int(v)


def split_top(raw: str) -> list[str]:
    """Split on commas outside parentheses: ``ecmc(anharmonic(2)), hmc-exact``."""
    out, depth, cur = [], 0, ""
    for ch in raw:
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
            continue
        depth += (ch == "(") - (ch == ")")
        cur += ch
    out.append(cur)
    return out


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, ""), i)
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
        lines[(section, key)] = i
    return lines


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, source) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, source) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno, source) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, source) from None
    lines = _line_numbers(text)
    known = {(s, k): (a, kind) for s, k, a, kind in SCHEMA}
    cfg = ExperimentConfig(source=source)
    for section in cp.sections():
        sec = section.lower()
        if sec not in {s for s, *_ in SCHEMA}:
            raise ConfigError(f"unknown section [{section}]", lines.get((sec, "")), source)
        for key, raw in cp.items(section):
            if (sec, key) not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((sec, key)), source)
            attr, kind = known[(sec, key)]
            try:
                setattr(cfg, attr, _convert(raw, kind))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", lines.get((sec, key)), source) from None
            cfg.lines[attr] = lines.get((sec, key))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, str(path))


def config_from_dict(d: dict) -> ExperimentConfig:
    names = {f.name for f in fields(ExperimentConfig)} - {"lines", "source"}
    return ExperimentConfig(**{k: v for k, v in d.items() if k in names})
