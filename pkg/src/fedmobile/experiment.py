"""Config-driven runs and sweeps.

A *world* (task, meeting schedule, contact trace) is a pure function of the
config and a seed; every variant of that seed runs in the same world, so
variant comparisons are paired.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import SEED_STREAMS, ExperimentConfig, derive_seed
from .learning import SyntheticTask, gen_synthetic
from .mobility import (
    MeetingSchedule,
    PeerContactTrace,
    gen_fixed_interval_schedule,
    gen_peer_contacts,
    gen_random_interval_schedule,
)
from .simulator import RunMetrics, VariantKind, VariantSpec, run

OUTPUT_ENV = "FEDMOBILE_OUTPUT"


@dataclass(frozen=True)
class World:
    task: SyntheticTask
    schedule: MeetingSchedule
    contacts: PeerContactTrace


def build_task(cfg: ExperimentConfig, seed: int) -> SyntheticTask:
    return gen_synthetic(
        cfg.n_clients, cfg.d, cfg.n_per_client, cfg.noise_std,
        derive_seed(seed, SEED_STREAMS["task"]), n_test=cfg.n_test,
    )


def build_schedule(cfg: ExperimentConfig, seed: int) -> MeetingSchedule:
    s = cfg.schedule
    if s.kind == "fixed":
        return gen_fixed_interval_schedule(cfg.n_clients, s.interval, cfg.horizon)
    return gen_random_interval_schedule(
        cfg.n_clients, s.min_gap, s.max_gap, cfg.horizon, derive_seed(seed, SEED_STREAMS["schedule"])
    )


def build_contacts(cfg: ExperimentConfig, seed: int, rho: Optional[float] = None) -> PeerContactTrace:
    rho = cfg.rho if rho is None else rho
    return gen_peer_contacts(cfg.n_clients, rho, cfg.horizon, derive_seed(seed, SEED_STREAMS["contacts"]))


def build_world(cfg: ExperimentConfig, seed: int) -> World:
    return World(build_task(cfg, seed), build_schedule(cfg, seed), build_contacts(cfg, seed))


def run_variant(
    cfg: ExperimentConfig,
    variant: VariantSpec,
    seed: int,
    world: Optional[World] = None,
    **kwargs,
) -> RunMetrics:
    world = world or build_world(cfg, seed)
    kwargs.setdefault("audit", cfg.audit)
    return run(
        world.task, world.schedule, world.contacts, variant, cfg.eta, cfg.horizon,
        derive_seed(seed, SEED_STREAMS["batches"]), batch_size=cfg.batch_size, **kwargs,
    )


def _run_job(args):
    cfg, variant, seed = args
    return run_variant(cfg, variant, seed)


def run_all(cfg: ExperimentConfig, jobs: int = 1) -> Dict[Tuple[str, int], RunMetrics]:
    """Every (variant, seed) pair of ``cfg``, keyed by ``(label, seed)``."""
    out: Dict[Tuple[str, int], RunMetrics] = {}
    if jobs > 1:
        todo = [(cfg, v, s) for s in cfg.seeds for v in cfg.variants]
        with ProcessPoolExecutor(jobs) as ex:
            for (c, v, s), m in zip(todo, ex.map(_run_job, todo)):
                out[(v.label, s)] = m
        return out
    for s in cfg.seeds:
        world = build_world(cfg, s)
        for v in cfg.variants:
            out[(v.label, s)] = run_variant(cfg, v, s, world)
    return out


# ------------------------------------------------------------------ sweeps

def sweep_point(cfg: ExperimentConfig, axis: str, value) -> Tuple[ExperimentConfig, VariantSpec]:
    """Config and variant for one sweep value; the rest of ``cfg`` is untouched."""
    base = VariantSpec(VariantKind(cfg.sweeps[axis]["variant"]))
    # a configured variant of the same kind donates its other parameters
    for v in cfg.variants:
        if v.kind is base.kind:
            base = v
            break
    if axis == "upload_window":
        return cfg, replace(base, theta=value[0], Theta=value[1])
    if axis == "download_window":
        return cfg, replace(base, omega=value[0], Omega=value[1])
    if axis == "k_up":
        return cfg, replace(base, k_up=int(value))
    if axis == "k_down":
        return cfg, replace(base, k_down=int(value))
    if axis == "rho":
        return replace(cfg, rho=float(value)), base
    raise ValueError(f"unknown sweep axis {axis!r}")


def axis_label(value) -> str:
    if isinstance(value, (list, tuple)):
        return "-".join(str(v) for v in value)
    return str(value)


@dataclass
class SweepResult:
    axis: str
    values: list
    losses: Dict[str, np.ndarray]  # axis label -> (n_seeds, T + 1)

    def mean_final(self) -> Dict[str, float]:
        return {k: float(v[:, -1].mean()) for k, v in self.losses.items()}

    def rows(self):
        for v in self.values:
            lab = axis_label(v)
            arr = self.losses[lab]
            mean, std = arr.mean(axis=0), arr.std(axis=0)
            for t in range(arr.shape[1]):
                yield lab, t, float(mean[t]), float(std[t])

    def csv_text(self, comment: Optional[str] = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("axis_value", "slot", "mean_loss", "std_loss"))
        for lab, t, m, s in self.rows():
            w.writerow((lab, t, repr(m), repr(s)))
        return buf.getvalue()


def _sweep_job(args):
    cfg, axis, value, seed = args
    c, v = sweep_point(cfg, axis, value)
    return run_variant(c, v, seed, audit=False).loss


def run_sweep(cfg: ExperimentConfig, axis: str, jobs: int = 1, values: Optional[Sequence] = None) -> SweepResult:
    if axis not in cfg.sweeps:
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = list(cfg.sweeps[axis]["values"] if values is None else values)
    todo = [(cfg, axis, v, s) for v in values for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            curves = list(ex.map(_sweep_job, todo))
    else:
        curves = [_sweep_job(a) for a in todo]
    losses: Dict[str, np.ndarray] = {}
    n = len(cfg.seeds)
    for k, v in enumerate(values):
        losses[axis_label(v)] = np.stack(curves[k * n:(k + 1) * n])
    return SweepResult(axis, values, losses)


# ------------------------------------------------------------------ output

def output_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` via a temp file in the same directory plus rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_file_stem(label: str, seed: int) -> str:
    return f"{label}_seed{seed}"


def write_run_outputs(cfg: ExperimentConfig, results: Dict[Tuple[str, int], RunMetrics], root: Path) -> List[Path]:
    comment = f"config_hash={cfg.config_hash()}"
    written = []
    for (label, seed), m in sorted(results.items()):
        stem = root / run_file_stem(label, seed)
        atomic_write(stem.with_suffix(".csv"), m.csv_text(comment))
        summary = m.summary()
        summary["config_hash"] = cfg.config_hash()
        atomic_write(stem.with_suffix(".json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
        written += [stem.with_suffix(".csv"), stem.with_suffix(".json")]
    atomic_write(root / "config.json", cfg.to_json())
    return written
