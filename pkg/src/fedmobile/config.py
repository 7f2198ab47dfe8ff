"""JSON experiment configuration.

Every field has an explicit default and :meth:`ExperimentConfig.to_dict`
writes all of them out, so a saved config alone reproduces a run.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .protocol import DownloadMode
from .simulator import VariantKind, VariantSpec

SWEEP_AXES = ("upload_window", "download_window", "rho", "k_up", "k_down")

DEFAULT_SWEEPS: Dict[str, Dict[str, Any]] = {
    "upload_window": {"variant": "FEDMOBILE_U", "values": [[0, 10], [20, 30], [40, 50]]},
    "download_window": {"variant": "FEDMOBILE_D", "values": [[0, 10], [20, 30], [40, 50]]},
    "rho": {"variant": "FEDMOBILE", "values": [0.0, 0.2, 0.5, 1.0]},
    "k_up": {"variant": "FEDMOBILE_U", "values": [1, 2, 3]},
    "k_down": {"variant": "FEDMOBILE_D", "values": [1, 2, 3]},
}

VARIANT_FIELDS = ("kind", "theta", "Theta", "omega", "Omega", "k_up", "k_down", "download_mode", "strict_tau_last", "name")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "fixed"  # fixed | random
    interval: int = 50
    min_gap: int = 30
    max_gap: int = 50

    @property
    def delta(self) -> int:
        return self.interval if self.kind == "fixed" else self.max_gap


def default_variants() -> Tuple[VariantSpec, ...]:
    return tuple(VariantSpec(k) for k in VariantKind)


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 200
    n_clients: int = 50
    n_per_client: int = 40
    n_test: int = 500
    noise_std: float = 0.1
    batch_size: int = 5
    eta: float = 0.01
    feature_dist: str = "standard_normal"
    weight_dist: str = "standard_normal"
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    rho: float = 0.5
    horizon: int = 1000
    variants: Tuple[VariantSpec, ...] = field(default_factory=default_variants)
    seeds: Tuple[int, ...] = (0, 1, 2)
    output_dir: str = "runs"
    audit: bool = True
    sweeps: Dict[str, Dict[str, Any]] = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_SWEEPS)))

    # ------------------------------------------------------------------ I/O
    def to_dict(self) -> dict:
        return {
            "task": {
                "d": self.d,
                "n_clients": self.n_clients,
                "n_per_client": self.n_per_client,
                "n_test": self.n_test,
                "noise_std": self.noise_std,
                "batch_size": self.batch_size,
                "eta": self.eta,
                "feature_dist": self.feature_dist,
                "weight_dist": self.weight_dist,
            },
            "schedule": dict(vars(self.schedule)),
            "rho": self.rho,
            "horizon": self.horizon,
            "variants": [variant_to_dict(v) for v in self.variants],
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "audit": self.audit,
            "sweeps": self.sweeps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        """Digest of every field that can change a result (the output location cannot)."""
        doc = self.to_dict()
        doc.pop("output_dir")
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a JSON object")
        _reject_unknown(raw, {"task", "schedule", "rho", "horizon", "variants", "seeds", "output_dir", "audit", "sweeps"}, "")
        task = raw.get("task", {})
        sched = raw.get("schedule", {})
        _reject_unknown(task, {"d", "n_clients", "n_per_client", "n_test", "noise_std", "batch_size", "eta", "feature_dist", "weight_dist"}, "task.")
        _reject_unknown(sched, {"kind", "interval", "min_gap", "max_gap"}, "schedule.")
        base = cls()
        kw: Dict[str, Any] = {}
        for name in ("d", "n_clients", "n_per_client", "n_test", "batch_size"):
            kw[name] = _int(task.get(name, getattr(base, name)), f"task.{name}", lo=1)
        kw["noise_std"] = _float(task.get("noise_std", base.noise_std), "task.noise_std", lo=0.0)
        kw["eta"] = _float(task.get("eta", base.eta), "task.eta", lo=0.0, strict=True)
        for name in ("feature_dist", "weight_dist"):
            val = task.get(name, getattr(base, name))
            if val != "standard_normal":
                raise ConfigError(f"task.{name}", f"only 'standard_normal' is supported, got {val!r}")
            kw[name] = val
        if kw["batch_size"] > kw["n_per_client"]:
            raise ConfigError("task.batch_size", "must not exceed task.n_per_client")

        kind = sched.get("kind", "fixed")
        if kind not in ("fixed", "random"):
            raise ConfigError("schedule.kind", f"expected 'fixed' or 'random', got {kind!r}")
        schedule = ScheduleSpec(
            kind=kind,
            interval=_int(sched.get("interval", 50), "schedule.interval", lo=1),
            min_gap=_int(sched.get("min_gap", 30), "schedule.min_gap", lo=1),
            max_gap=_int(sched.get("max_gap", 50), "schedule.max_gap", lo=1),
        )
        if schedule.min_gap > schedule.max_gap:
            raise ConfigError("schedule.min_gap", "must not exceed schedule.max_gap")
        kw["schedule"] = schedule

        rho = _float(raw.get("rho", base.rho), "rho", lo=0.0)
        if rho > 1:
            raise ConfigError("rho", "must lie in [0, 1]")
        kw["rho"] = rho
        kw["horizon"] = _int(raw.get("horizon", base.horizon), "horizon", lo=1)

        variants = raw.get("variants")
        if variants is None:
            kw["variants"] = default_variants()
        else:
            if not isinstance(variants, list) or not variants:
                raise ConfigError("variants", "expected a non-empty list")
            kw["variants"] = tuple(
                variant_from_dict(v, f"variants[{k}]", schedule.delta) for k, v in enumerate(variants)
            )
            labels = [v.label for v in kw["variants"]]
            if len(set(labels)) != len(labels):
                raise ConfigError("variants", f"variant labels must be unique, got {labels}")

        seeds = raw.get("seeds", list(base.seeds))
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "expected a non-empty list of integers")
        kw["seeds"] = tuple(_int(s, f"seeds[{k}]", lo=0) for k, s in enumerate(seeds))
        out = raw.get("output_dir", base.output_dir)
        if not isinstance(out, str) or not out:
            raise ConfigError("output_dir", "expected a non-empty string")
        kw["output_dir"] = out
        audit = raw.get("audit", True)
        if not isinstance(audit, bool):
            raise ConfigError("audit", "expected true or false")
        kw["audit"] = audit

        sweeps = json.loads(json.dumps(DEFAULT_SWEEPS))
        user_sweeps = raw.get("sweeps", {})
        if not isinstance(user_sweeps, dict):
            raise ConfigError("sweeps", "expected an object keyed by axis name")
        for axis, spec in user_sweeps.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"sweeps.{axis}", f"unknown axis; expected one of {SWEEP_AXES}")
            if not isinstance(spec, dict):
                raise ConfigError(f"sweeps.{axis}", "expected an object")
            _reject_unknown(spec, {"variant", "values"}, f"sweeps.{axis}.")
            sweeps[axis].update(spec)
        for axis, spec in sweeps.items():
            _check_sweep(axis, spec, schedule.delta)
        kw["sweeps"] = sweeps
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {p}: {exc.strerror or exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(raw)

    def variant(self, label: str) -> VariantSpec:
        for v in self.variants:
            if v.label == label:
                return v
        raise KeyError(label)


def variant_to_dict(v: VariantSpec) -> dict:
    return {
        "kind": v.kind.value,
        "theta": v.theta,
        "Theta": v.Theta,
        "omega": v.omega,
        "Omega": v.Omega,
        "k_up": v.k_up,
        "k_down": v.k_down,
        "download_mode": v.download_mode.value,
        "strict_tau_last": v.strict_tau_last,
        "name": v.name,
    }


def variant_from_dict(raw: Any, where: str, delta: Optional[int] = None) -> VariantSpec:
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict):
        raise ConfigError(where, "expected an object or a variant kind string")
    _reject_unknown(raw, set(VARIANT_FIELDS), where + ".")
    kind = raw.get("kind")
    if kind not in VariantKind.__members__:
        raise ConfigError(f"{where}.kind", f"expected one of {list(VariantKind.__members__)}, got {kind!r}")
    mode = raw.get("download_mode", "GLOBAL_COPY")
    if mode not in DownloadMode.__members__:
        raise ConfigError(f"{where}.download_mode", f"expected GLOBAL_COPY or LOCAL_MODEL, got {mode!r}")
    kw = {"kind": kind, "download_mode": mode}
    for name in ("theta", "Theta", "omega", "Omega", "k_up", "k_down"):
        if name in raw:
            kw[name] = _int(raw[name], f"{where}.{name}", lo=0)
    if "strict_tau_last" in raw:
        if not isinstance(raw["strict_tau_last"], bool):
            raise ConfigError(f"{where}.strict_tau_last", "expected true or false")
        kw["strict_tau_last"] = raw["strict_tau_last"]
    if raw.get("name") is not None:
        kw["name"] = str(raw["name"])
    try:
        spec = VariantSpec(**kw)
        if delta is not None:
            spec.validate(delta)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None
    return spec


def _check_sweep(axis: str, spec: dict, delta: int) -> None:
    where = f"sweeps.{axis}"
    if spec.get("variant") not in VariantKind.__members__:
        raise ConfigError(f"{where}.variant", f"unknown variant kind {spec.get('variant')!r}")
    values = spec.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{where}.values", "expected a non-empty list")
    for k, v in enumerate(values):
        w = f"{where}.values[{k}]"
        if axis.endswith("window"):
            if not (isinstance(v, list) and len(v) == 2 and all(isinstance(e, int) for e in v)):
                raise ConfigError(w, "expected [lo, hi]")
            if not 0 <= v[0] <= v[1] <= delta:
                raise ConfigError(w, f"need 0 <= lo <= hi <= delta={delta}")
        elif axis == "rho":
            if not isinstance(v, (int, float)) or not 0 <= v <= 1:
                raise ConfigError(w, "expected a probability in [0, 1]")
        else:
            _int(v, w, lo=0)


def _reject_unknown(raw: dict, allowed: set, prefix: str) -> None:
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected an object")
    for key in raw:
        if key not in allowed:
            raise ConfigError(prefix + key, "unknown field")


def _int(v, where: str, lo: Optional[int] = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(where, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(where, f"must be >= {lo}, got {v}")
    return v


def _float(v, where: str, lo: Optional[float] = None, strict: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ConfigError(where, f"expected a finite number, got {v!r}")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(where, f"must be {'>' if strict else '>='} {lo}, got {v}")
    return float(v)


def derive_seed(seed: int, stream: int) -> int:
    """Independent integer seed for one randomness stream of a run."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


SEED_STREAMS = {"task": 0, "schedule": 1, "contacts": 2, "batches": 3}
