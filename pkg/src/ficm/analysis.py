"""Learning curves, bonus maps, the forgetting probe, and parameter reports.

Everything here is recomputable from the CSVs a run emits; plots carry no
private state.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .checkpoint import load_into, read_checkpoint
from .config import load_config
from .curiosity import build_curiosity
from .errors import InvalidInputError
from .flownets import ARCH_TAGS, count_parameters
from .harness import BONUS_CSV, CHECKPOINT_DIR, CONFIG_FILE, config_hash
from .maze_env import MazeEnv, Pose


def load_episode_csv(path):
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    if not rows:
        raise InvalidInputError(f"no episode records in {path}")
    return {
        "episode": np.array([int(r["episode"]) for r in rows]),
        "env_steps": np.array([int(r["env_steps"]) for r in rows]),
        "steps": np.array([int(r["steps"]) for r in rows]),
        "extrinsic_return": np.array([float(r["extrinsic_return"]) for r in rows]),
        "mean_intrinsic": np.array([float(r["mean_intrinsic"]) for r in rows]),
        "success": np.array([int(r["success"]) for r in rows]),
    }


def load_bonus_csv(path):
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    if not rows:
        raise InvalidInputError(f"no bonus records in {path}")
    out = {}
    for key in ("episode", "step", "heading", "next_heading", "action"):
        out[key] = np.array([int(r[key]) for r in rows])
    for key in ("x", "y", "next_x", "next_y", "bonus"):
        out[key] = np.array([float(r[key]) for r in rows])
    return out


def smooth_series(values, window: int) -> np.ndarray:
    """Trailing moving average with a window shrunk at the start."""
    values = np.asarray(values, dtype=np.float64)
    if window <= 1 or len(values) <= 1:
        return values.copy()
    window = min(window, len(values))
    csum = np.concatenate([[0.0], np.cumsum(values)])
    out = np.empty_like(values)
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def _maybe_warn_config_mismatch(csv_paths) -> None:
    hashes = {}
    for p in csv_paths:
        cfg_path = Path(p).parent / CONFIG_FILE
        if cfg_path.exists():
            cfg = load_config(cfg_path)
            cfg.run_id = ""  # run identity may differ across seeds of one setup
            cfg.train.seed = 0
            hashes[str(p)] = config_hash(cfg)
    if len(set(hashes.values())) > 1:
        warnings.warn(f"aggregating runs with mismatched configs: {hashes}", stacklevel=2)


def plot_learning_curve(csv_paths, out_png, out_csv=None, window: int = 100, points: int = 512):
    """Aggregate learning curves: mean line with a min/max band across runs.

    x = cumulative env steps, y = smoothed extrinsic return per episode.
    Returns ``(out_png, out_csv, grid, mean, low, high)``.
    """
    csv_paths = [Path(p) for p in csv_paths]
    if not csv_paths:
        raise InvalidInputError("plot_learning_curve needs at least one episode CSV")
    _maybe_warn_config_mismatch(csv_paths)
    curves = []
    for p in csv_paths:
        data = load_episode_csv(p)
        curves.append((data["env_steps"].astype(np.float64), smooth_series(data["extrinsic_return"], window)))
    max_x = min(float(x[-1]) for x, _ in curves)
    grid = np.linspace(0.0, max_x, points)
    stacked = np.stack([np.interp(grid, x, y) for x, y in curves])
    mean = stacked.mean(axis=0)
    low = stacked.min(axis=0)
    high = stacked.max(axis=0)

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.fill_between(grid, low, high, alpha=0.25, label="min/max over runs")
    ax.plot(grid, mean, lw=1.8, label=f"mean of {len(curves)} run(s)")
    ax.set_xlabel("environment steps")
    ax.set_ylabel(f"extrinsic return (window {window})")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="best")
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)

    if out_csv is None:
        out_csv = out_png.with_suffix(".csv")
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("env_steps", "mean_return", "min_return", "max_return"))
        for row in zip(grid, mean, low, high):
            writer.writerow([repr(float(v)) for v in row])
    return out_png, Path(out_csv), grid, mean, low, high


def _parse_ranges(ranges):
    parsed = []
    for r in ranges:
        lo, hi = (int(v) for v in (r if isinstance(r, (tuple, list)) else str(r).split("-")))
        if hi < lo:
            raise InvalidInputError(f"episode range {r!r} is reversed")
        parsed.append((lo, hi))
    for a, b in zip(sorted(parsed), sorted(parsed)[1:]):
        if b[0] <= a[1]:
            raise InvalidInputError(f"episode ranges overlap: {a} and {b}")
    return parsed


def _layout_for(bonus_csv):
    cfg_path = Path(bonus_csv).parent / CONFIG_FILE
    if not cfg_path.exists():
        return None
    return MazeEnv(load_config(cfg_path).env).layout


def plot_bonus_map(bonus_csv, episode_ranges, out_prefix=None):
    """One scatter panel per episode range: darker/larger points = higher bonus.

    Returns a list of ``{"range", "path", "count"}`` dicts.  Point shading is
    normalized by the maximum bonus across the selected ranges so panels are
    comparable; all-zero bonuses render uniformly lightest.
    """
    bonus_csv = Path(bonus_csv)
    data = load_bonus_csv(bonus_csv)
    ranges = _parse_ranges(episode_ranges)
    if out_prefix is None:
        out_prefix = bonus_csv.with_suffix("")
    layout = _layout_for(bonus_csv)

    masks = [(lo, hi, (data["episode"] >= lo) & (data["episode"] <= hi)) for lo, hi in ranges]
    global_max = max((data["bonus"][m].max() for _, _, m in masks if m.any()), default=0.0)
    results = []
    for lo, hi, mask in masks:
        fig, ax = plt.subplots(figsize=(5, 5))
        if layout is not None:
            ax.imshow(layout.walls, cmap="gray_r", alpha=0.35, origin="upper")
        count = int(mask.sum())
        if count:
            xs = data["next_x"][mask]
            ys = data["next_y"][mask]
            b = data["bonus"][mask]
            rel = b / global_max if global_max > 0 else np.zeros_like(b)
            ax.scatter(
                xs,
                ys,
                s=4 + 36 * rel,
                c=rel,
                cmap="Greys",
                vmin=0.0,
                vmax=1.0,
                edgecolors="none",
            )
        else:
            ax.annotate("no records in range", xy=(0.5, 0.5), xycoords="axes fraction", ha="center")
        ax.set_title(f"episodes [{lo}, {hi}]")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.invert_yaxis()
        fig.tight_layout()
        path = Path(f"{out_prefix}_e{lo}-{hi}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        results.append({"range": (lo, hi), "path": path, "count": count})
    return results


def max_bonus_first_visit_quantile(bonus_data) -> float:
    """Quantile of the max-bonus cell's first-visit time among all visited cells.

    Values near 1 mean the largest bonuses sit on the freshly-visited
    frontier rather than on long-known ground.
    """
    cells = {}
    order = np.argsort(bonus_data["step"], kind="stable")
    for idx in order:
        key = (int(round(bonus_data["next_x"][idx])), int(round(bonus_data["next_y"][idx])))
        if key not in cells:
            cells[key] = int(bonus_data["step"][idx])
    best = int(np.argmax(bonus_data["bonus"]))
    best_cell = (int(round(bonus_data["next_x"][best])), int(round(bonus_data["next_y"][best])))
    first_visits = np.array(sorted(cells.values()))
    rank = np.searchsorted(first_visits, cells[best_cell], side="right")
    return rank / len(first_visits)


def _checkpoint_steps(path: Path) -> int:
    return int(path.stem.split("_")[-1])


def probe_forgetting(run_dir, freeze_episode: int, stride: int = 1, max_pairs: int = 512, out_csv=None):
    """Frozen-probe bonus curve across a run's stored checkpoints.

    The probe set is every distinct pose pair logged up to ``freeze_episode``
    (subsampled evenly to ``max_pairs``); frames are re-rendered from poses,
    so the set is immutable and identical for every checkpoint.  Returns
    ``(steps, mean_bonuses)`` and writes a CSV when ``out_csv`` is given.
    """
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / CONFIG_FILE)
    if cfg.curiosity.module_kind == "none":
        raise InvalidInputError(f"run {run_dir} trained without a curiosity module; nothing to probe")
    data = load_bonus_csv(run_dir / BONUS_CSV)
    mask = data["episode"] <= freeze_episode
    if not mask.any():
        raise InvalidInputError(f"no bonus records at or before episode {freeze_episode}")

    seen = set()
    pairs = []
    for i in np.flatnonzero(mask):
        key = (
            data["x"][i],
            data["y"][i],
            data["heading"][i],
            data["next_x"][i],
            data["next_y"][i],
            data["next_heading"][i],
            data["action"][i],
        )
        if key not in seen:
            seen.add(key)
            pairs.append(key)
    if len(pairs) > max_pairs:
        idx = np.unique(np.linspace(0, len(pairs) - 1, max_pairs).astype(int))
        pairs = [pairs[i] for i in idx]

    env = MazeEnv(cfg.env)
    frames_t = np.stack([env.render_pose(Pose(p[0], p[1], int(p[2]))) for p in pairs])
    frames_t1 = np.stack([env.render_pose(Pose(p[3], p[4], int(p[5]))) for p in pairs])
    actions = [int(p[6]) for p in pairs]

    ckpt_dir = run_dir / CHECKPOINT_DIR
    checkpoints = sorted(ckpt_dir.glob("ckpt_*.npz"), key=_checkpoint_steps)
    if not checkpoints:
        raise InvalidInputError(
            f"no checkpoints under {ckpt_dir}; expected one every {cfg.checkpoint_every} env steps plus a final one"
        )
    checkpoints = checkpoints[:: max(1, int(stride))]

    curiosity = build_curiosity(
        cfg.curiosity,
        resolution=cfg.env.render_size,
        num_actions=MazeEnv.num_actions,
        seed=0,
    )
    steps = []
    means = []
    for path in checkpoints:
        load_into(path, curiosity.checkpoint_modules(), expect={"curiosity_kind": curiosity.kind})
        bonuses = curiosity.probe_bonus(frames_t, frames_t1, actions)
        steps.append(_checkpoint_steps(path))
        means.append(float(np.mean(bonuses)))

    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("checkpoint_step", "mean_probe_bonus"))
            for s, m in zip(steps, means):
                writer.writerow((s, repr(m)))
    return np.array(steps), np.array(means)


def non_rebound_ratio(bonuses) -> float:
    """max(curve after its first minimum) / min(curve); 1.0 means no rebound."""
    bonuses = np.asarray(bonuses, dtype=np.float64)
    if bonuses.size == 0:
        raise InvalidInputError("empty probe curve")
    i_min = int(np.argmin(bonuses))
    floor = bonuses[i_min]
    if floor <= 0:
        return 1.0 if np.all(bonuses[i_min:] <= 0) else float("inf")
    return float(bonuses[i_min:].max() / floor)


_REPORT_ORDER = ("icm", "icm-pixels", "ficm-c", "ficm-s")
_DISPLAY = {"icm": "ICM", "icm-pixels": "ICM-pixels", "ficm-c": "FICM-C", "ficm-s": "FICM-S"}


def report_params(resolution: int = 42, frame_stack: int = 4, num_actions: int = 4) -> str:
    """Parameter-count table for every curiosity architecture."""
    lines = [f"parameter counts at {resolution}x{resolution} input"]
    lines.append(f"{'module':<12} {'parameters':>12}")
    for tag in _REPORT_ORDER:
        n = count_parameters(tag, input_resolution=resolution, frame_stack=frame_stack, num_actions=num_actions)
        lines.append(f"{_DISPLAY[tag]:<12} {n:>12,}")
    return "\n".join(lines)


def parameter_counts(resolution: int = 42, frame_stack: int = 4, num_actions: int = 4) -> dict:
    return {
        tag: count_parameters(tag, input_resolution=resolution, frame_stack=frame_stack, num_actions=num_actions)
        for tag in ARCH_TAGS
    }
