"""Plain ``key = value`` run configuration.

One setting per line, ``#`` starts a comment.  Unknown keys and values
outside their documented range raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .regparam import RULES, SelectionRule, StoppingPolicy

METHODS = ("sdhybr", "genhybr", "fhybr", "alternating", "sdhybr_alt", "mm")
CASES = ("case1", "case2", "custom")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # problem; None keeps the generator's default for the chosen case
    case: str = "case1"
    seed: int = 0
    nlevel: Optional[float] = None
    side: Optional[int] = None
    m_frac: Optional[float] = None
    n_spikes: Optional[int] = None
    amp_lo: Optional[float] = None
    amp_hi: Optional[float] = None
    truth_nu: Optional[float] = None
    truth_ell: Optional[float] = None
    recon_nu: Optional[float] = None
    recon_ell: Optional[float] = None
    footprint_width: Optional[float] = None
    n_frames: Optional[int] = None
    n_angles: Optional[int] = None
    n: Optional[int] = None
    m: Optional[int] = None
    smooth_amp: Optional[float] = None
    # solver
    method: str = "sdhybr"
    rule: str = "wgcv"
    max_iter: int = 50
    epsilon: float = 1e-6
    tau: float = 1.0
    gcv_tol: float = 1e-6
    window: int = 3
    reorthogonalize: bool = True
    fixed_lambda: Optional[float] = None
    fixed_alpha: Optional[float] = None
    lambda_ratio: float = 1.0
    compare_alternating: bool = False
    sweep_points: int = 9
    sweep_lo: float = -6.0
    sweep_hi: float = 2.0
    # output
    out_dir: str = "out"
    formats: str = "csv,pgm"

    def selection_rule(self, truth=None) -> SelectionRule:
        if self.rule == "fixed":
            if self.fixed_lambda is None or self.fixed_alpha is None:
                raise ConfigError("rule = fixed needs fixed_lambda and fixed_alpha")
            return SelectionRule("fixed", fixed_values=(self.fixed_lambda, self.fixed_alpha))
        if self.rule == "optimal":
            if truth is None:
                raise ConfigError("rule = optimal needs the true solution in the problem file")
            return SelectionRule("optimal", truth=truth)
        return SelectionRule(self.rule, tau=self.tau)

    def stopping(self) -> StoppingPolicy:
        return StoppingPolicy(self.max_iter, self.gcv_tol, self.window)

_POSITIVE = {"truth_nu", "truth_ell", "recon_nu", "recon_ell", "footprint_width", "epsilon", "gcv_tol",
             "lambda_ratio", "m_frac"}
_AT_LEAST_ONE = {"max_iter", "window", "n_frames", "n_angles", "n", "m", "sweep_points"}
_NONNEG = {"nlevel", "n_spikes", "seed", "amp_lo", "fixed_lambda", "fixed_alpha", "smooth_amp"}
_CHOICES = {"case": CASES, "method": METHODS, "rule": RULES}


def _convert(name, ftype, raw):
    try:
        if "bool" in ftype:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if "int" in ftype:
            return int(raw)
        if "float" in ftype:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def validate(cfg: RunConfig) -> RunConfig:
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if f.name in _CHOICES and v not in _CHOICES[f.name]:
            raise ConfigError(f"{f.name}: must be one of {', '.join(_CHOICES[f.name])}")
        if f.name in _POSITIVE and not v > 0:
            raise ConfigError(f"{f.name}: must be positive")
        if f.name in _AT_LEAST_ONE and v < 1:
            raise ConfigError(f"{f.name}: must be >= 1")
        if f.name in _NONNEG and v < 0:
            raise ConfigError(f"{f.name}: must be nonnegative")
    if cfg.side is not None and cfg.side < 8:
        raise ConfigError("side: must be >= 8")
    if (cfg.amp_lo is None) != (cfg.amp_hi is None):
        raise ConfigError("amp_lo: set together with amp_hi")
    if cfg.amp_lo is not None and cfg.amp_hi < cfg.amp_lo:
        raise ConfigError("amp_hi: must be >= amp_lo")
    if cfg.tau < 1:
        raise ConfigError("tau: must be >= 1")
    if cfg.m_frac is not None and cfg.m_frac > 1:
        raise ConfigError("m_frac: must be <= 1")
    if cfg.sweep_hi < cfg.sweep_lo:
        raise ConfigError("sweep_hi: must be >= sweep_lo")
    return cfg


def parse_config(text: str) -> RunConfig:
    types = {f.name: str(f.type) for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in types:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        values[key] = _convert(key, types[key], raw)
    return validate(RunConfig(**values))


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
