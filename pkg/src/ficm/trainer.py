"""Actor-critic training over parallel maze workers with intrinsic bonuses.

Two execution modes:

* ``sync`` — all workers advance in lock step; policy evaluation, curiosity
  rewards, and updates are batched across workers.  Fully deterministic for a
  fixed seed and the mode used by reproducibility checks.
* ``async`` — one thread per worker with a local policy snapshot applying
  gradients to the shared parameters without locking (torn reads are
  tolerated by design); log records flow through a serializing lock.

Each transition's intrinsic reward comes from the curiosity module's
pre-update parameters: a fused pass yields every pair's loss as the bonus and
then takes one gradient step on the mean of those same losses.  The return
computation always consumes ``r_e + r_i``.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass

import numpy as np
import torch

from .config import ExperimentConfig
from .curiosity import RunningStd, build_curiosity
from .errors import NumericError
from .maze_env import MazeEnv, _mix
from .policy import PolicyNet, Trajectory, a3c_update, select_action

_FRAME_STACK = 4


@dataclass
class EpisodeRecord:
    episode: int
    env_steps: int
    steps: int
    extrinsic_return: float
    mean_intrinsic: float
    success: bool


@dataclass
class BonusRecord:
    episode: int
    step: int
    x: float
    y: float
    heading: int
    next_x: float
    next_y: float
    next_heading: int
    action: int
    bonus: float


@dataclass
class RunStats:
    env_steps: int
    episodes: int
    final_success_rate: float
    early_stopped: bool
    wall_time: float


class NullSinks:
    """Drops all records; stands in when no artifacts are wanted."""

    def on_episode(self, record: EpisodeRecord) -> None:
        pass

    def on_bonus(self, records) -> None:
        pass

    def on_checkpoint(self, env_steps: int, modules: dict, meta: dict) -> None:
        pass

    def close(self) -> None:
        pass


class _EpisodeAccum:
    __slots__ = ("episode", "steps", "return_ext", "intrinsic_sum", "success", "env_steps_at_end")

    def __init__(self, episode: int):
        self.episode = episode
        self.steps = 0
        self.return_ext = 0.0
        self.intrinsic_sum = 0.0
        self.success = False
        self.env_steps_at_end = 0


class _StepRecord:
    __slots__ = (
        "obs",
        "action",
        "reward_ext",
        "reward_int",
        "next_obs",
        "done",
        "pose",
        "next_pose",
        "value",
        "accum",
        "stack_t",
        "stack_t1",
        "transition_index",
    )


class _Worker:
    def __init__(self, wid: int, cfg: ExperimentConfig, needs_stacks: bool):
        self.wid = wid
        self.env = MazeEnv(cfg.env)
        self.rng = np.random.Generator(np.random.PCG64(_mix(cfg.train.seed, wid, 0xAC7)))
        self.needs_stacks = needs_stacks
        self.episode_counter = 0
        self.obs = None
        self.pose = None
        self.accum: _EpisodeAccum | None = None
        self.stack: deque | None = deque(maxlen=_FRAME_STACK) if needs_stacks else None

    def start_episode(self, base_seed: int, episode_id: int):
        seed = _mix(base_seed, self.wid, self.episode_counter, 0xE9)
        self.episode_counter += 1
        result = self.env.reset(seed=seed)
        self.obs = result.observation
        self.pose = result.info["pose"]
        self.accum = _EpisodeAccum(episode_id)
        if self.stack is not None:
            self.stack.clear()
            for _ in range(_FRAME_STACK):
                self.stack.append(self.obs)


class _RunState:
    """Counters and rolling-success bookkeeping shared by both modes."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.env_steps = 0
        self.next_episode_id = 0
        self.transition_counter = 0
        self.completed_episodes = 0
        self.success_window = deque(maxlen=cfg.train.success_window)
        self.last_checkpoint_bucket = 0
        self.lock = threading.Lock()

    def claim_episode_id(self) -> int:
        with self.lock:
            eid = self.next_episode_id
            self.next_episode_id += 1
            return eid

    def record_success(self, success: bool) -> None:
        self.success_window.append(bool(success))
        self.completed_episodes += 1

    @property
    def rolling_success(self) -> float:
        if not self.success_window:
            return 0.0
        return sum(self.success_window) / len(self.success_window)

    def should_stop_early(self) -> bool:
        bar = self.cfg.train.early_stop_success
        return (
            bar is not None
            and len(self.success_window) == self.cfg.train.success_window
            and self.rolling_success >= bar
        )


def _checkpoint_if_due(state: _RunState, cfg, sinks, policy, curiosity, force=False):
    bucket = state.env_steps // cfg.checkpoint_every
    if force or bucket > state.last_checkpoint_bucket:
        state.last_checkpoint_bucket = bucket
        modules = {"policy": policy, **curiosity.checkpoint_modules()}
        meta = {
            "env_steps": state.env_steps,
            "curiosity_kind": curiosity.kind,
            "resolution": cfg.env.render_size,
            "episodes": state.completed_episodes,
        }
        sinks.on_checkpoint(state.env_steps, modules, meta)


def _collect_segment(cfg, policy, workers, state: _RunState, claim_id):
    """Advance every worker n_step slots; returns step records in slot order."""
    n_step = cfg.train.n_step
    records = []
    finished = []
    for _ in range(n_step):
        obs_batch = torch.from_numpy(np.stack([w.obs for w in workers])).unsqueeze(1)
        with torch.inference_mode():
            logits, values = policy(obs_batch)
        if not (torch.isfinite(logits).all() and torch.isfinite(values).all()):
            raise NumericError("policy produced non-finite outputs during rollout")
        logits_np = logits.numpy()
        values_np = values.numpy()
        for i, w in enumerate(workers):
            action = select_action(logits_np[i], w.rng)
            result = w.env.step(action)
            rec = _StepRecord()
            rec.obs = w.obs
            rec.action = action
            rec.reward_ext = result.reward
            rec.reward_int = 0.0
            rec.next_obs = result.observation
            rec.done = result.done
            rec.pose = w.pose
            rec.next_pose = result.info["pose"]
            rec.value = float(values_np[i])
            rec.accum = w.accum
            with state.lock:
                rec.transition_index = state.transition_counter
                state.transition_counter += 1
                state.env_steps += 1
            if w.stack is not None:
                rec.stack_t = np.stack(w.stack)
                w.stack.append(result.observation)
                rec.stack_t1 = np.stack(w.stack)
            else:
                rec.stack_t = rec.stack_t1 = None
            records.append(rec)

            w.accum.steps += 1
            w.accum.return_ext += result.reward
            if result.done:
                w.accum.success = result.reward > 0
                w.accum.env_steps_at_end = state.env_steps
                finished.append(w.accum)
                w.start_episode(cfg.train.seed, claim_id())
            else:
                w.obs = result.observation
                w.pose = result.info["pose"]
    return records, finished


def _apply_curiosity(cfg, curiosity, records, normalizer):
    """Fused reward+update over a segment; fills in each record's bonus."""
    if not records:
        return 0.0
    if curiosity.kind == "none":
        return 0.0
    if curiosity.needs_stacks:
        stacks_t = np.stack([r.stack_t for r in records])
        stacks_t1 = np.stack([r.stack_t1 for r in records])
        actions = [r.action for r in records]
        rewards, loss = curiosity.reward_and_update(stacks_t, actions, stacks_t1)
    else:
        frames_t = np.stack([r.obs for r in records])
        frames_t1 = np.stack([r.next_obs for r in records])
        rewards, loss = curiosity.reward_and_update(frames_t, frames_t1)
    if normalizer is not None:
        normalizer.update(rewards)
        rewards = normalizer.normalize(rewards)
    for rec, r_i in zip(records, rewards):
        rec.reward_int = float(r_i)
        rec.accum.intrinsic_sum += float(r_i)
    return loss


def _emit_logs(cfg, sinks, records, finished, state: _RunState):
    bonus = [
        BonusRecord(
            episode=r.accum.episode,
            step=r.transition_index,
            x=r.pose.x,
            y=r.pose.y,
            heading=r.pose.heading,
            next_x=r.next_pose.x,
            next_y=r.next_pose.y,
            next_heading=r.next_pose.heading,
            action=r.action,
            bonus=r.reward_int,
        )
        for r in records
        if r.transition_index % cfg.log_every == 0
    ]
    if bonus:
        sinks.on_bonus(bonus)
    for accum in finished:
        state.record_success(accum.success)
        sinks.on_episode(
            EpisodeRecord(
                episode=accum.episode,
                env_steps=accum.env_steps_at_end,
                steps=accum.steps,
                extrinsic_return=accum.return_ext,
                mean_intrinsic=accum.intrinsic_sum / max(accum.steps, 1),
                success=accum.success,
            )
        )


def _build_trajectories(records, workers, policy):
    """Split each worker's slot records at episode ends and attach bootstraps."""
    per_worker = {w.wid: [] for w in workers}
    # records are in slot-major order: regroup by worker preserving time order
    n_workers = len(workers)
    for idx, rec in enumerate(records):
        per_worker[workers[idx % n_workers].wid].append(rec)
    pending = []
    trajectories = []
    for w in workers:
        traj = Trajectory()
        for rec in per_worker[w.wid]:
            traj.transitions.append(rec)
            traj.values.append(rec.value)
            if rec.done:
                traj.bootstrap_value = 0.0
                trajectories.append(traj)
                traj = Trajectory()
        if traj.transitions:
            pending.append((w, traj))
            trajectories.append(traj)
    if pending:
        obs_batch = torch.from_numpy(np.stack([w.obs for w, _ in pending])).unsqueeze(1)
        with torch.inference_mode():
            _, values = policy(obs_batch)
        for (w, traj), v in zip(pending, values.numpy()):
            traj.bootstrap_value = float(v)
    return trajectories


def _train_sync(cfg: ExperimentConfig, sinks) -> RunStats:
    torch.manual_seed(cfg.train.seed)
    policy = PolicyNet(
        num_actions=MazeEnv.num_actions,
        resolution=cfg.env.render_size,
        seed=_mix(cfg.train.seed, 0x90),
    )
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.train.learning_rate)
    curiosity = build_curiosity(
        cfg.curiosity,
        resolution=cfg.env.render_size,
        num_actions=MazeEnv.num_actions,
        frame_stack=_FRAME_STACK,
        seed=_mix(cfg.train.seed, 0xC0),
    )
    normalizer = RunningStd() if cfg.curiosity.normalize_rewards else None
    state = _RunState(cfg)
    workers = [_Worker(i, cfg, curiosity.needs_stacks) for i in range(cfg.train.workers)]
    for w in workers:
        w.start_episode(cfg.train.seed, state.claim_episode_id())

    start = time.perf_counter()
    early = False
    while state.env_steps < cfg.train.total_env_steps:
        records, finished = _collect_segment(cfg, policy, workers, state, state.claim_episode_id)
        _apply_curiosity(cfg, curiosity, records, normalizer)
        _emit_logs(cfg, sinks, records, finished, state)
        trajectories = _build_trajectories(records, workers, policy)
        a3c_update(policy, optimizer, trajectories, cfg.train)
        _checkpoint_if_due(state, cfg, sinks, policy, curiosity)
        if state.should_stop_early():
            early = True
            break
    _checkpoint_if_due(state, cfg, sinks, policy, curiosity, force=True)
    return RunStats(
        env_steps=state.env_steps,
        episodes=state.completed_episodes,
        final_success_rate=state.rolling_success,
        early_stopped=early,
        wall_time=time.perf_counter() - start,
    )


class _AsyncWorkerLoop(threading.Thread):
    def __init__(self, wid, cfg, shared_policy, shared_optimizer, curiosity, normalizer, state, sinks, sink_lock, errors):
        super().__init__(daemon=True, name=f"worker-{wid}")
        self.wid = wid
        self.cfg = cfg
        self.shared_policy = shared_policy
        self.shared_optimizer = shared_optimizer
        self.curiosity = curiosity
        self.normalizer = normalizer
        self.state = state
        self.sinks = sinks
        self.sink_lock = sink_lock
        self.errors = errors

    def run(self):
        try:
            cfg = self.cfg
            local = PolicyNet(
                num_actions=MazeEnv.num_actions,
                resolution=cfg.env.render_size,
                seed=_mix(cfg.train.seed, 0x90, self.wid),
            )
            worker = _Worker(self.wid, cfg, self.curiosity.needs_stacks)
            worker.start_episode(cfg.train.seed, self.state.claim_episode_id())
            local_opt = torch.optim.SGD(local.parameters(), lr=0.0)  # placeholder, grads applied to shared
            while self.state.env_steps < cfg.train.total_env_steps and not self.state.should_stop_early():
                local.load_state_dict(self.shared_policy.state_dict())
                records, finished = _collect_segment(cfg, local, [worker], self.state, self.state.claim_episode_id)
                _apply_curiosity(cfg, self.curiosity, records, self.normalizer)
                with self.sink_lock:
                    _emit_logs(cfg, self.sinks, records, finished, self.state)
                trajectories = _build_trajectories(records, [worker], local)
                a3c_update(local, local_opt, trajectories, cfg.train)
                # Hogwild-style shared application: copy local gradients over.
                for sp, lp in zip(self.shared_policy.parameters(), local.parameters()):
                    sp.grad = lp.grad
                self.shared_optimizer.step()
                self.shared_optimizer.zero_grad(set_to_none=True)
                with self.sink_lock:
                    _checkpoint_if_due(self.state, cfg, self.sinks, self.shared_policy, self.curiosity)
        except BaseException as exc:  # noqa: BLE001 - reported to the main thread
            self.errors.append((self.wid, exc))


def _train_async(cfg: ExperimentConfig, sinks) -> RunStats:
    torch.manual_seed(cfg.train.seed)
    shared_policy = PolicyNet(
        num_actions=MazeEnv.num_actions,
        resolution=cfg.env.render_size,
        seed=_mix(cfg.train.seed, 0x90),
    )
    shared_policy.share_memory()
    shared_optimizer = torch.optim.Adam(shared_policy.parameters(), lr=cfg.train.learning_rate)
    curiosity = build_curiosity(
        cfg.curiosity,
        resolution=cfg.env.render_size,
        num_actions=MazeEnv.num_actions,
        frame_stack=_FRAME_STACK,
        seed=_mix(cfg.train.seed, 0xC0),
    )
    normalizer = RunningStd() if cfg.curiosity.normalize_rewards else None
    state = _RunState(cfg)
    sink_lock = threading.Lock()
    errors: list = []
    threads = [
        _AsyncWorkerLoop(i, cfg, shared_policy, shared_optimizer, curiosity, normalizer, state, sinks, sink_lock, errors)
        for i in range(cfg.train.workers)
    ]
    start = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        wid, exc = errors[0]
        raise RuntimeError(f"worker {wid} failed: {exc}") from exc
    with sink_lock:
        _checkpoint_if_due(state, cfg, sinks, shared_policy, curiosity, force=True)
    return RunStats(
        env_steps=state.env_steps,
        episodes=state.completed_episodes,
        final_success_rate=state.rolling_success,
        early_stopped=state.should_stop_early(),
        wall_time=time.perf_counter() - start,
    )


def train(cfg: ExperimentConfig, sinks=None) -> RunStats:
    """Run a full training loop, emitting artifacts through ``sinks``."""
    cfg.validate()
    sinks = sinks or NullSinks()
    torch.set_flush_denormal(True)  # ELU tails breed denormals that stall CPU convs
    if cfg.train.mode == "sync":
        return _train_sync(cfg, sinks)
    return _train_async(cfg, sinks)
