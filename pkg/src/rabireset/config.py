"""Versioned YAML run configuration.

Physical inputs are in experimentalist units (frequencies/2pi in Hz, times
in seconds) and are converted to rad/us and us once, in :meth:`RunConfig.to_spec`.

Schema (version 1)::

    version: 1
    experiment: thermal_reset        # one of protocols.KINDS
    seed: 0
    tol: 1.0e-8
    workers: 1
    out: null
    params:                          # defaults: the flute-cavity device
      dispersive_shift_m_hz: 57000.0 # 2 chi_m / 2pi
      ...
    drives:                          # targets OR raw amplitudes, not both
      abar_m_over_kappa_chi: [0.125, 0.5]   # chi_m |abar_m| / kappa_r, list = sweep
      abar_r_over_kappa_chi: 1.0
      sign_m: -1
      sign_r: -1
    prep: {nbar: 30.0, n_samples: 1500}
    settings: {hold_s: 8.0e-5, hold_step_s: 2.0e-6}

Raw amplitudes are ``eps_m_hz``/``eps_r_hz`` (``|eps|/2pi``).  Settings use
the per-experiment names of :data:`protocols.DEFAULT_SETTINGS`, with
``_s`` appended for durations and ``_hz`` for angular rates.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import yaml

from .hilbert import default_layout
from .model import TWO_PI, DriveParams, SystemParams
from .protocols import DEFAULT_SETTINGS, KINDS, ExperimentSpec, ThermalPrep

SCHEMA_VERSION = 1
ENV_OUT = "RABIRESET_OUT"
ENV_WORKERS = "RABIRESET_WORKERS"

PARAM_DEFAULTS = {
    "dispersive_shift_m_hz": 57.0e3,
    "dispersive_shift_r_hz": 635.0e3,
    "memory_lifetime_s": 170.0e-6,
    "kappa_r_hz": 382.0e3,
    "t1_s": 25.0e-6,
    "t2_echo_s": 20.0e-6,
    "rabi_hz": 9.0e6,
    "anharmonicity_hz": 265.0e6,
    "bath_occupation": 0.0,
}
TARGET_KEYS = ("abar_m_over_kappa_chi", "abar_r_over_kappa_chi")
EPS_KEYS = ("eps_m_hz", "eps_r_hz")
DRIVE_KEYS = TARGET_KEYS + EPS_KEYS + ("sign_m", "sign_r")
PREP_KEYS = ("nbar", "n_samples")
TOP_KEYS = ("version", "experiment", "seed", "tol", "workers", "out", "params", "drives", "prep", "settings")

TIME_SETTINGS = {"hold", "hold_step", "ramp"}
RATE_SETTINGS = {"off_resonant_detuning", "eps_scale"}
NEEDS_DRIVES = {"thermal_reset", "coupling_sweep", "fock_reset", "vacuum_rabi"}


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending key (dotted)."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _setting_key(name: str) -> str:
    if name in TIME_SETTINGS:
        return name + "_s"
    if name in RATE_SETTINGS:
        return name + "_hz"
    return name


def _setting_from_config(name: str, value):
    if value is None:
        return None
    if name in TIME_SETTINGS:
        return float(value) * 1e6
    if name in RATE_SETTINGS:
        return TWO_PI * float(value) * 1e-6
    if isinstance(value, list):
        return tuple(value)
    return value


def _number(path: str, value, positive: bool = False, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and not float(value).is_integer():
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and value <= 0:
        raise ConfigError(path, f"must be > 0, got {value!r}")
    return int(value) if integer else float(value)


def _mapping(path: str, value) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(path: str, given: dict, allowed):
    for key in given:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")


def _as_list(path: str, value) -> list[float]:
    vals = value if isinstance(value, list) else [value]
    if not vals:
        raise ConfigError(path, "sweep list is empty")
    return [_number(f"{path}[{i}]" if isinstance(value, list) else path, v) for i, v in enumerate(vals)]


@dataclass
class RunConfig:
    """A validated configuration with defaults applied (config units)."""

    experiment: str
    seed: int = 0
    tol: float = 1e-8
    workers: int = 1
    out: str | None = None
    params: dict = field(default_factory=lambda: dict(PARAM_DEFAULTS))
    drives: dict = field(default_factory=dict)
    prep: dict | None = None
    settings: dict = field(default_factory=dict)
    version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        out = {
            "version": self.version,
            "experiment": self.experiment,
            "seed": self.seed,
            "tol": self.tol,
            "workers": self.workers,
            "out": self.out,
            "params": dict(self.params),
            "drives": copy.deepcopy(self.drives),
            "settings": copy.deepcopy(self.settings),
        }
        if self.prep is not None:
            out["prep"] = dict(self.prep)
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # --- conversion --------------------------------------------------------------------

    def system_params(self) -> SystemParams:
        p = self.params
        return SystemParams.from_si(
            p["dispersive_shift_m_hz"],
            p["dispersive_shift_r_hz"],
            p["memory_lifetime_s"],
            p["kappa_r_hz"],
            p["t1_s"],
            p["t2_echo_s"],
            p["rabi_hz"],
            p["anharmonicity_hz"],
            default_layout(),
            p["bath_occupation"],
        )

    def drive_list(self, params: SystemParams) -> tuple[DriveParams, ...]:
        d = self.drives
        sign_m, sign_r = d.get("sign_m", -1), d.get("sign_r", -1)
        if any(k in d for k in TARGET_KEYS):
            keys, build = TARGET_KEYS, lambda m, r: DriveParams.from_couplings(params, m, r, sign_m, sign_r)
        elif any(k in d for k in EPS_KEYS):
            keys = EPS_KEYS

            def build(m, r):
                return DriveParams(TWO_PI * m * 1e-6, TWO_PI * r * 1e-6, sign_m, sign_r)
        else:
            return (DriveParams(sign_m=sign_m, sign_r=sign_r),)
        cols = [d.get(k, 0.0) for k in keys]
        cols = [c if isinstance(c, list) else [c] for c in cols]
        n = max(len(c) for c in cols)
        cols = [c * n if len(c) == 1 else c for c in cols]
        return tuple(build(m, r) for m, r in zip(*cols))

    def to_spec(self) -> ExperimentSpec:
        params = self.system_params()
        prep = None
        if self.prep is not None:
            prep = ThermalPrep(self.prep["nbar"], self.prep.get("n_samples", 1500), self.seed)
        settings = {}
        for name in DEFAULT_SETTINGS[self.experiment]:
            key = _setting_key(name)
            if key in self.settings:
                settings[name] = _setting_from_config(name, self.settings[key])
        return ExperimentSpec(
            self.experiment, params, self.drive_list(params), prep, self.seed, self.tol, settings
        )


def parse_config(text: str) -> RunConfig:
    """Parse and validate YAML text; raises :class:`ConfigError` with a key path."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed YAML: {exc}") from None
    return config_from_dict(raw)


def config_from_dict(raw) -> RunConfig:
    raw = _mapping("", raw)
    _reject_unknown("", raw, TOP_KEYS)
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    kind = raw.get("experiment")
    if kind is None:
        raise ConfigError("experiment", "missing required field")
    if kind not in KINDS:
        raise ConfigError("experiment", f"unknown experiment {kind!r}; choose from {', '.join(KINDS)}")

    seed = _number("seed", raw.get("seed", 0), integer=True)
    if seed < 0:
        raise ConfigError("seed", "must be >= 0")
    tol = _number("tol", raw.get("tol", 1e-8), positive=True)
    workers = _number("workers", raw.get("workers", 1), positive=True, integer=True)
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out", "expected a path string")

    params = dict(PARAM_DEFAULTS)
    given = _mapping("params", raw.get("params"))
    _reject_unknown("params", given, PARAM_DEFAULTS)
    for key, value in given.items():
        if key == "anharmonicity_hz" and value is None:
            params[key] = None
            continue
        params[key] = _number(f"params.{key}", value, positive=key != "bath_occupation")
    if params["bath_occupation"] < 0:
        raise ConfigError("params.bath_occupation", "must be >= 0")
    if params["t2_echo_s"] > 2 * params["t1_s"]:
        raise ConfigError("params.t2_echo_s", "exceeds 2 * t1_s")

    drives = _parse_drives(_mapping("drives", raw.get("drives")), kind)

    prep = None
    if "prep" in raw and raw["prep"] is not None:
        pg = _mapping("prep", raw["prep"])
        _reject_unknown("prep", pg, PREP_KEYS)
        if "nbar" not in pg:
            raise ConfigError("prep.nbar", "missing required field")
        prep = {
            "nbar": _number("prep.nbar", pg["nbar"]),
            "n_samples": _number("prep.n_samples", pg.get("n_samples", 1500), positive=True, integer=True),
        }
        if prep["nbar"] < 0:
            raise ConfigError("prep.nbar", "must be >= 0")
    if kind in ("thermal_reset", "coupling_sweep") and prep is None:
        raise ConfigError("prep", f"missing required field for {kind}")

    settings = _mapping("settings", raw.get("settings"))
    allowed = {_setting_key(n) for n in DEFAULT_SETTINGS[kind]}
    _reject_unknown("settings", settings, allowed)
    settings = copy.deepcopy(settings)

    cfg = RunConfig(kind, seed, tol, workers, out, params, drives, prep, settings, version)
    try:
        cfg.to_spec()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("settings" if settings else "", str(exc)) from None
    return cfg


def _parse_drives(d: dict, kind: str) -> dict:
    _reject_unknown("drives", d, DRIVE_KEYS)
    has_t = [k for k in TARGET_KEYS if k in d]
    has_e = [k for k in EPS_KEYS if k in d]
    if has_t and has_e:
        raise ConfigError(f"drives.{has_e[0]}", f"conflicts with drives.{has_t[0]}: give abar targets or raw eps, not both")
    if kind in NEEDS_DRIVES and not (has_t or has_e):
        raise ConfigError("drives", f"missing required field for {kind} (give abar targets or raw eps)")
    out = {}
    lengths = set()
    for key in has_t + has_e:
        vals = _as_list(f"drives.{key}", d[key])
        if any(v < 0 for v in vals):
            raise ConfigError(f"drives.{key}", "must be >= 0")
        if isinstance(d[key], list):
            lengths.add(len(vals))
            out[key] = vals
        else:
            out[key] = vals[0]
    if len(lengths) > 1:
        raise ConfigError("drives", f"sweep lists have different lengths {sorted(lengths)}")
    for key in ("sign_m", "sign_r"):
        if key in d:
            if d[key] not in (-1, 1) or isinstance(d[key], bool):
                raise ConfigError(f"drives.{key}", f"must be -1 or +1, got {d[key]!r}")
            out[key] = int(d[key])
    return out


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def template(kind: str = "thermal_reset") -> RunConfig:
    """A minimal valid configuration for ``kind``."""
    drives = {"abar_m_over_kappa_chi": 0.5, "abar_r_over_kappa_chi": 1.0 if kind == "thermal_reset" else 0.5}
    raw = {"experiment": kind}
    if kind in NEEDS_DRIVES:
        raw["drives"] = drives
    if kind in ("thermal_reset", "coupling_sweep"):
        raw["prep"] = {"nbar": 30.0, "n_samples": 1500}
    return config_from_dict(raw)
