"""Run configuration loaded from JSON.

Example::

    {
      "kernel": {"matern": {"nu": 1.5, "sigma2": 1.0, "ell": 1.0}},
      "likelihood": {"name": "gaussian", "sigma2": 0.1},
      "method": "ihgp",
      "grid": {"K": 32, "gmin": 0.01, "gmax": 1000.0},
      "seed": 0
    }

Mode-specific sections are ``optimizer``, ``online``, ``lgcp``, ``bench``
and ``gen``; see the README for their keys.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import ConfigurationError, IhgpError
from ..lik import LikelihoodModel
from ..ssm import KernelSpec, kernel_to_dict, parse_kernel

MODES = ("infer", "fit", "online", "lgcp", "bench", "gen")
METHODS = ("ihgp", "exact")

_DEFAULTS = {
    "grid": {"K": 32, "gmin": 1e-2, "gmax": 1e3},
    "optimizer": {"max_iter": 500, "gtol": 1e-6, "fixed": []},
    "online": {"window": 500, "step": 100, "eta": 0.01},
    "lgcp": {"t0": None, "t1": None, "bin_width": None, "n_bins": None},
    "bench": {"m_list": [2, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100], "n": 10000, "repetitions": 3,
              "noise_sigma2": 0.1},
    "gen": {"n": 1000, "mode": "regression", "noise_var": 0.1, "x_min": 0.0, "x_max": 12.0},
}


def _section(doc, name):
    out = dict(_DEFAULTS[name])
    given = doc.get(name) or {}
    if not isinstance(given, dict):
        raise ConfigurationError(f"'{name}' must be an object")
    unknown = set(given) - set(out)
    if unknown:
        raise ConfigurationError(f"unknown keys in '{name}': {sorted(unknown)}")
    out.update(given)
    return out


@dataclass
class RunConfig:
    kernel: Optional[KernelSpec] = None
    likelihood: Optional[LikelihoodModel] = None
    dt: Optional[float] = None
    method: str = "ihgp"
    mode: Optional[str] = None
    seed: int = 0
    grid: dict = field(default_factory=lambda: dict(_DEFAULTS["grid"]))
    optimizer: dict = field(default_factory=lambda: dict(_DEFAULTS["optimizer"]))
    online: dict = field(default_factory=lambda: dict(_DEFAULTS["online"]))
    lgcp: dict = field(default_factory=lambda: dict(_DEFAULTS["lgcp"]))
    bench: dict = field(default_factory=lambda: dict(_DEFAULTS["bench"]))
    gen: dict = field(default_factory=lambda: dict(_DEFAULTS["gen"]))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigurationError("config must be a JSON object")
        known = {"kernel", "likelihood", "dt", "method", "mode", "seed", *_DEFAULTS}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            kernel = parse_kernel(doc["kernel"]) if doc.get("kernel") is not None else None
            likelihood = LikelihoodModel.from_dict(doc["likelihood"]) if doc.get("likelihood") else None
        except IhgpError as exc:
            raise ConfigurationError(str(exc)) from exc
        dt = doc.get("dt")
        if dt is not None and not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
            raise ConfigurationError(f"dt must be a positive number, got {dt!r}")
        method = doc.get("method", "ihgp")
        if method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {method!r}")
        mode = doc.get("mode")
        if mode is not None and mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigurationError(f"seed must be an integer, got {seed!r}")
        return cls(kernel=kernel, likelihood=likelihood, dt=None if dt is None else float(dt), method=method,
                   mode=mode, seed=seed, **{name: _section(doc, name) for name in _DEFAULTS})

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(doc)

    def require(self, mode: str) -> "RunConfig":
        """Check that the fields ``mode`` needs are present."""
        if self.mode is not None and self.mode != mode:
            raise ConfigurationError(f"config is for mode '{self.mode}', command is '{mode}'")
        if mode in ("infer", "fit", "online", "lgcp") and self.kernel is None:
            raise ConfigurationError(f"mode '{mode}' needs a 'kernel'")
        if mode in ("infer", "fit", "online") and self.likelihood is None:
            raise ConfigurationError(f"mode '{mode}' needs a 'likelihood'")
        if mode in ("fit", "online") and self.likelihood.kind != "gaussian":
            raise ConfigurationError(f"mode '{mode}' supports only the Gaussian likelihood")
        if mode == "online":
            o = self.online
            if not (int(o["window"]) >= 1 and int(o["step"]) >= 1):
                raise ConfigurationError("online window and step must be positive integers")
        if mode == "lgcp" and not (self.lgcp.get("bin_width") or self.lgcp.get("n_bins")):
            raise ConfigurationError("mode 'lgcp' needs lgcp.bin_width or lgcp.n_bins")
        if mode == "gen" and self.gen["mode"] not in ("regression", "classification", "poisson"):
            raise ConfigurationError(f"unknown gen mode {self.gen['mode']!r}")
        return self

    def to_dict(self) -> dict:
        out = {"method": self.method, "seed": self.seed, "dt": self.dt, "mode": self.mode}
        if self.kernel is not None:
            out["kernel"] = kernel_to_dict(self.kernel)
        if self.likelihood is not None:
            out["likelihood"] = self.likelihood.to_dict()
        out.update({name: getattr(self, name) for name in _DEFAULTS})
        return out
