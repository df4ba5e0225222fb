"""Run orchestration: directories, CSV logs, checkpoints, and the manifest.

A run directory contains everything needed to re-execute the run in sync
mode: ``config.yaml`` (exact snapshot), ``episodes.csv``, ``bonus.csv``,
``checkpoints/ckpt_<steps>.npz``, and ``manifest.json`` with seeds, code
version, and outcome.  On mid-run failure the manifest records the error and
partial artifacts stay in place.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict
from pathlib import Path

import yaml

from . import __version__
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, config_to_dict, load_config, save_config
from .errors import ConfigError, RunFailure
from .trainer import train

EPISODES_CSV = "episodes.csv"
BONUS_CSV = "bonus.csv"
CONFIG_FILE = "config.yaml"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_DIR = "checkpoints"
OUTPUT_ROOT_ENV = "FICM_OUTPUT_ROOT"

EPISODE_FIELDS = ("episode", "env_steps", "steps", "extrinsic_return", "mean_intrinsic", "success")
BONUS_FIELDS = (
    "episode",
    "step",
    "x",
    "y",
    "heading",
    "next_x",
    "next_y",
    "next_heading",
    "action",
    "bonus",
)


class CsvSinks:
    """Serializing artifact writer for one run directory."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.ckpt_dir = self.run_dir / CHECKPOINT_DIR
        self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        self._episodes_fh = open(self.run_dir / EPISODES_CSV, "w", newline="")
        self._episodes = csv.writer(self._episodes_fh)
        self._episodes.writerow(EPISODE_FIELDS)
        self._bonus_fh = open(self.run_dir / BONUS_CSV, "w", newline="")
        self._bonus = csv.writer(self._bonus_fh)
        self._bonus.writerow(BONUS_FIELDS)
        self.checkpoint_paths: list[Path] = []

    def on_episode(self, rec) -> None:
        self._episodes.writerow(
            (
                rec.episode,
                rec.env_steps,
                rec.steps,
                repr(float(rec.extrinsic_return)),
                repr(float(rec.mean_intrinsic)),
                int(rec.success),
            )
        )

    def on_bonus(self, records) -> None:
        for r in records:
            self._bonus.writerow(
                (
                    r.episode,
                    r.step,
                    repr(float(r.x)),
                    repr(float(r.y)),
                    r.heading,
                    repr(float(r.next_x)),
                    repr(float(r.next_y)),
                    r.next_heading,
                    r.action,
                    repr(float(r.bonus)),
                )
            )

    def on_checkpoint(self, env_steps: int, modules: dict, meta: dict) -> None:
        path = self.ckpt_dir / f"ckpt_{env_steps:012d}.npz"
        save_checkpoint(path, modules, meta)
        self.checkpoint_paths.append(path)

    def flush(self) -> None:
        self._episodes_fh.flush()
        self._bonus_fh.flush()

    def close(self) -> None:
        self._episodes_fh.close()
        self._bonus_fh.close()


def config_hash(cfg: ExperimentConfig) -> str:
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def resolve_output_root(cfg: ExperimentConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir)


def _write_manifest(run_dir: Path, manifest: dict) -> None:
    (run_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run(config, run_dir=None, output_root=None) -> Path:
    """Execute a configured run and return its artifact directory.

    ``config`` may be an :class:`ExperimentConfig` or a path to a YAML file.
    Raises :class:`ConfigError` before any work if the config is invalid,
    and :class:`RunFailure` (after writing an error manifest) if training
    aborts mid-way.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    cfg.validate()
    if run_dir is None:
        run_dir = resolve_output_root(cfg, output_root) / cfg.run_id
    run_dir = Path(run_dir)
    if run_dir.exists() and any(run_dir.iterdir()):
        raise ConfigError(f"run directory {run_dir} already exists and is not empty")
    run_dir.mkdir(parents=True, exist_ok=True)

    save_config(cfg, run_dir / CONFIG_FILE)
    manifest = {
        "run_id": cfg.run_id,
        "version": __version__,
        "status": "running",
        "config_sha256": config_hash(cfg),
        "seeds": {"train": cfg.train.seed, "layout": cfg.env.layout_seed},
        "curiosity": cfg.curiosity.module_kind,
        "zeta": cfg.curiosity.zeta,
        "mode": cfg.train.mode,
        "spawn_setting": cfg.env.spawn_setting,
        "started_unix": time.time(),
    }
    _write_manifest(run_dir, manifest)

    sinks = CsvSinks(run_dir)
    try:
        stats = train(cfg, sinks)
    except Exception as exc:
        sinks.close()
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        _write_manifest(run_dir, manifest)
        raise RunFailure(f"run {cfg.run_id} failed: {exc}") from exc
    sinks.close()
    manifest.update(
        status="completed",
        env_steps=stats.env_steps,
        episodes=stats.episodes,
        final_success_rate=stats.final_success_rate,
        early_stopped=stats.early_stopped,
        wall_time_sec=stats.wall_time,
        checkpoints=[p.name for p in sinks.checkpoint_paths],
    )
    _write_manifest(run_dir, manifest)
    return run_dir


def read_manifest(run_dir) -> dict:
    return json.loads((Path(run_dir) / MANIFEST_FILE).read_text())
