"""Run orchestration: config parsing, training loops, evaluation curves,
ablation sweeps, generalization studies, and CSV/SVG emission.

All randomness flows from per-run seeds through named spawned streams, so
identical configs reproduce identical checkpoints and CSVs byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint, distval, plots, roadmap as rmod, searchpolicy as sp
from .distval import ReplayBuffer, TrainConfig, make_encoder
from .ensemble import EnsembleConfig, ValueEnsemble
from .gridworld import (
    EpisodeConfig,
    GridMap,
    State,
    builtin_map,
    load_map_file,
    oracle_distance,
    random_maze,
    reset,
    step,
)


class ConfigError(Exception):
    """Invalid or unreadable configuration (CLI exit code 2)."""


BACKENDS = ("tabular", "mlp", "scalar_tabular", "scalar_mlp")
METHOD_COLORS = {"sorb": "#1f77b4", "greedy_only": "#ff7f0e", "random": "#7f7f7f"}

SWEEP_AXES = {
    "search_buffer_size": [50, 100, 250, 500, 1000],
    "maxdist": [1, 2, 3, 5, 8],
    "ensemble": [1, 3],
    "aggregation": ["max", "mean"],
    "distributional": ["on", "off"],
}


# ---------------------------------------------------------------------------
# Config


@dataclasses.dataclass
class MapConfig:
    name: str = "four_rooms"
    file: Optional[str] = None
    size: int = 21
    train_seeds: Optional[list] = None  # multi-maze training mode
    heldout_seeds: Optional[list] = None

    def multi(self) -> bool:
        return self.train_seeds is not None

    def canonical(self) -> str:
        if self.file:
            return f"file:{self.file}"
        if self.multi():
            seeds = ",".join(str(s) for s in self.train_seeds)
            return f"random_maze(size={self.size},train_seeds=[{seeds}])"
        return self.name

    def resolve(self) -> list[GridMap]:
        if self.file:
            return [load_map_file(self.file)]
        if self.multi():
            return [random_maze(s, self.size) for s in self.train_seeds]
        return [builtin_map(self.name)]


@dataclasses.dataclass
class ModelConfig:
    backend: str = "tabular"
    encoder: str = "coords"
    patch_radius: int = 2
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.encoder not in ("coords", "coords_patch"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")


@dataclasses.dataclass
class EvalConfig:
    distances: list = dataclasses.field(default_factory=lambda: [5, 10, 20, 30])
    trials_per_distance: int = 30
    horizon: Optional[int] = None
    include_random: bool = True
    max_sample_attempts: int = 200


@dataclasses.dataclass
class RunConfig:
    map: MapConfig
    episode: EpisodeConfig
    train: TrainConfig
    model: ModelConfig
    ensemble: EnsembleConfig
    eval: EvalConfig
    maxdist: float = 3.0
    search_buffer_size: int = 1000
    train_buffer_capacity: int = 100_000
    seeds: list = dataclasses.field(default_factory=lambda: [0])
    out_dir: str = "runs/out"
    sweep_axis: Optional[str] = None
    probe_every: int = 5000

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.maxdist <= 0:
            raise ConfigError("maxdist must be positive")
        if self.map.multi() and self.model.backend in ("tabular", "scalar_tabular"):
            raise ConfigError("multi-maze training needs a network backend")


def _take(section: dict, cls, **overrides):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = {**section, **overrides}
    try:
        return cls(**merged)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {cls.__name__}: {e}") from e


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a (possibly empty) JSON dict.  Unset fields
    fall back to defaults; a few defaults depend on the map."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = {
        "map",
        "episode",
        "train",
        "model",
        "ensemble",
        "eval",
        "maxdist",
        "search_buffer_size",
        "train_buffer_capacity",
        "seeds",
        "out_dir",
        "sweep",
        "probe_every",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    map_cfg = _take(dict(data.get("map", {})), MapConfig)
    large = map_cfg.name == "large_four_rooms" and not map_cfg.multi() and not map_cfg.file

    episode = dict(data.get("episode", {}))
    episode.setdefault("max_steps", 300 if large else 100)
    episode_cfg = _take(episode, EpisodeConfig)

    model = dict(data.get("model", {}))
    if map_cfg.multi():
        model.setdefault("backend", "mlp")
        model.setdefault("encoder", "coords_patch")
    model_cfg = _take(model, ModelConfig)
    if "hidden" in model:
        model_cfg.hidden = tuple(int(h) for h in model["hidden"])

    train = dict(data.get("train", {}))
    train.setdefault("num_bins", 40 if large else 20)
    tabular = model_cfg.backend in ("tabular", "scalar_tabular")
    train.setdefault("learning_rate", 0.1 if tabular else 1e-4)
    train_cfg = _take(train, TrainConfig)

    eval_section = dict(data.get("eval", {}))
    if "distances" not in eval_section:
        if large:
            eval_section["distances"] = [20, 40, 60, 80, 100]
        elif map_cfg.multi():
            eval_section["distances"] = [5, 10]
        else:
            eval_section["distances"] = [5, 10, 20, 30]
    eval_cfg = _take(eval_section, EvalConfig)

    sweep = data.get("sweep", {})
    axis = sweep.get("axis") if isinstance(sweep, dict) else None

    return RunConfig(
        map=map_cfg,
        episode=episode_cfg,
        train=train_cfg,
        model=model_cfg,
        ensemble=_take(dict(data.get("ensemble", {})), EnsembleConfig),
        eval=eval_cfg,
        maxdist=float(data.get("maxdist", 3.0)),
        search_buffer_size=int(data.get("search_buffer_size", 1000)),
        train_buffer_capacity=int(data.get("train_buffer_capacity", 100_000)),
        seeds=list(data.get("seeds", [0])),
        out_dir=str(data.get("out_dir", "runs/out")),
        sweep_axis=axis,
        probe_every=int(data.get("probe_every", 5000)),
    )


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return config_from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {
        "map": dataclasses.asdict(cfg.map),
        "episode": dataclasses.asdict(cfg.episode),
        "train": dataclasses.asdict(cfg.train),
        "model": dataclasses.asdict(cfg.model),
        "ensemble": dataclasses.asdict(cfg.ensemble),
        "eval": dataclasses.asdict(cfg.eval),
        "maxdist": cfg.maxdist,
        "search_buffer_size": cfg.search_buffer_size,
        "train_buffer_capacity": cfg.train_buffer_capacity,
        "seeds": cfg.seeds,
        "out_dir": cfg.out_dir,
        "probe_every": cfg.probe_every,
    }
    if cfg.sweep_axis:
        out["sweep"] = {"axis": cfg.sweep_axis}
    out["model"]["hidden"] = list(cfg.model.hidden)
    out["train"]["relabel_probs"] = list(cfg.train.relabel_probs)
    return out


# ---------------------------------------------------------------------------
# Worker pool


def thread_count() -> int:
    cap = os.environ.get("SORB_THREADS")
    if cap:
        return max(1, int(cap))
    return min(os.cpu_count() or 1, 4)


def run_ordered(fns: list) -> list:
    """Run zero-arg callables, results in submission order.  Tasks must own
    their rng streams, so scheduling cannot change any result."""
    n = thread_count()
    if n <= 1 or len(fns) <= 1:
        return [f() for f in fns]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(lambda f: f(), fns))


# ---------------------------------------------------------------------------
# Ensemble construction and training


def _member_streams(seed: int, k: int):
    """Spawned child streams keyed by index, so member i's streams do not
    depend on the total member count (a K=1 run reproduces member 0 of a
    K=3 run exactly)."""
    root = np.random.default_rng(seed)
    children = root.spawn(2 + 2 * k)
    collect, probe = children[0], children[1]
    init_seeds = [int(children[2 + 2 * i].integers(2**31)) for i in range(k)]
    batch_rngs = [children[3 + 2 * i] for i in range(k)]
    return collect, probe, init_seeds, batch_rngs


def build_ensemble(cfg: RunConfig, grid: GridMap, seed: int) -> tuple[ValueEnsemble, np.random.Generator, np.random.Generator]:
    collect, probe, init_seeds, batch_rngs = _member_streams(seed, cfg.ensemble.size)
    members = []
    for i in range(cfg.ensemble.size):
        members.append(_make_estimator(cfg, grid, init_seeds[i]))
    ens = ValueEnsemble(members, cfg.ensemble, batch_rngs)
    return ens, collect, probe


def _make_estimator(cfg: RunConfig, grid: GridMap, seed: int):
    backend = cfg.model.backend
    bins = cfg.train.num_bins
    if backend == "tabular":
        return distval.TabularEstimator(grid, bins, seed=seed)
    if backend == "scalar_tabular":
        return distval.ScalarTabularEstimator(grid, bins, seed=seed)
    encoder = make_encoder(cfg.model.encoder, grid.width, grid.height, cfg.model.patch_radius)
    cls = distval.MLPEstimator if backend == "mlp" else distval.ScalarMLPEstimator
    return cls(grid, bins, encoder=encoder, hidden=cfg.model.hidden, seed=seed)


def _buffer_encoder(cfg: RunConfig, grid: GridMap):
    if cfg.model.backend in ("mlp", "scalar_mlp"):
        return make_encoder(cfg.model.encoder, grid.width, grid.height, cfg.model.patch_radius)
    return None


@dataclasses.dataclass
class TrainResult:
    ensemble: ValueEnsemble
    buffer: ReplayBuffer
    search_buffer: rmod.SearchBuffer
    loss_rows: list  # (step, mean_loss, probe_success or "")
    maps: list


def train_run(cfg: RunConfig, seed: int, progress: bool = False) -> TrainResult:
    """One training run: epsilon-greedy collection with hindsight
    relabeling, one member train step per env step after warmup (applied
    in a burst at episode end so relabeling sees whole trajectories)."""
    maps = cfg.map.resolve()
    ens, collect, probe_rng = build_ensemble(cfg, maps[0], seed)
    buffer = ReplayBuffer(cfg.train_buffer_capacity, encoder=_buffer_encoder(cfg, maps[0]))
    tcfg = cfg.train
    ecfg = cfg.episode
    env_steps = 0
    trained = 0
    loss_rows = []
    while env_steps < tcfg.total_env_steps:
        grid = maps[collect.integers(len(maps))] if len(maps) > 1 else maps[0]
        ens.bind(grid)
        s, g = reset(grid, ecfg, collect)
        traj = []
        for _ in range(ecfg.max_steps):
            if env_steps < tcfg.random_warmup_steps:
                a = int(collect.integers(4))
            else:
                a = distval.epsilon_greedy_action(ens.members[0], s, g, tcfg.epsilon, collect)
            tr = step(grid, s, a, g, ecfg, collect)
            traj.append(tr)
            s = tr.next_state
            env_steps += 1
            if tr.done or env_steps >= tcfg.total_env_steps:
                break
        if not traj[-1].done:
            traj[-1].timeout = True
        relabeled = distval.relabel(traj, collect, tcfg.relabel_probs, grid, ecfg.goal_radius)
        buffer.extend(grid, relabeled, ecfg.goal_radius)
        if buffer.size >= tcfg.batch_size:
            due = max(0, env_steps - tcfg.random_warmup_steps) - trained
            for _ in range(due):
                losses = ens.train_all(buffer, tcfg)
                trained += 1
                probe_val = ""
                if cfg.probe_every and trained % cfg.probe_every == 0:
                    probe_val = repr(_probe_success(ens, grid, ecfg, probe_rng))
                loss_rows.append((trained, float(np.mean(losses)), probe_val))
                if progress and trained % 20000 == 0:
                    print(f"  seed {seed}: {trained} train steps, loss {np.mean(losses):.4f}")
    if cfg.map.multi():
        walk_rng = np.random.default_rng([seed, 0xB0FF])
        search_buffer = rmod.SearchBuffer.from_random_walks(
            maps[0], cfg.search_buffer_size, walk_rng, ecfg
        )
    else:
        search_buffer = rmod.SearchBuffer.from_training_buffer(
            maps[0], buffer, cfg.search_buffer_size
        )
    return TrainResult(ens, buffer, search_buffer, loss_rows, maps)


def _probe_success(ens: ValueEnsemble, grid: GridMap, ecfg: EpisodeConfig, rng) -> float:
    wins = 0
    trials = 5
    for _ in range(trials):
        s, g = reset(grid, ecfg, rng)
        res = sp.greedy_rollout(ens.members[0], grid, ecfg, s, g, rng, horizon=50)
        wins += res.success
    return wins / trials


# ---------------------------------------------------------------------------
# Evaluation


def sample_pair_at_distance(grid: GridMap, d: int, rng: np.random.Generator) -> tuple[State, State]:
    """Uniform start among free cells that have some cell at oracle
    distance exactly d, then a uniform such goal."""
    order = rng.permutation(len(grid.free_cells))
    for idx in order:
        x, y = grid.free_cells[idx]
        s = State(int(x), int(y))
        field = grid.distance_field(s)
        ys, xs = np.nonzero(field == d)
        if len(xs):
            j = int(rng.integers(len(xs)))
            return s, State(int(xs[j]), int(ys[j]))
    raise ConfigError(f"map {grid.name!r} has no state pair at oracle distance {d}")


def sample_eval_pairs(grid: GridMap, distances, trials: int, seed: int) -> dict:
    """Per-bucket pair lists, fixed by (seed, bucket) so every method is
    scored on identical tasks."""
    out = {}
    for d in distances:
        rng = np.random.default_rng([seed, 7001, int(d)])
        out[int(d)] = [sample_pair_at_distance(grid, int(d), rng) for _ in range(trials)]
    return out


@dataclasses.dataclass
class EvalRecord:
    method: str
    seed: int
    distance: int
    success_rate: float
    mean_steps: Optional[float]  # over successes; None when none succeeded
    axis: str = ""  # set by sweeps
    setting: object = None


def _method_rollout(method: str, ps, est, grid, ecfg, s, g, rng, horizon):
    if method == "sorb":
        return sp.rollout(ps, grid, ecfg, s, g, rng, horizon=horizon)
    if method == "greedy_only":
        return sp.greedy_rollout(est, grid, ecfg, s, g, rng, horizon=horizon)
    if method == "random":
        return sp.random_rollout(grid, ecfg, s, g, rng, horizon=horizon)
    raise ValueError(f"unknown method {method!r}")


def evaluate_policy(
    cfg: RunConfig,
    ens: ValueEnsemble,
    search_buffer: rmod.SearchBuffer,
    grid: GridMap,
    seed: int,
    maxdist: Optional[float] = None,
    roadmap: Optional[rmod.Roadmap] = None,
) -> list[EvalRecord]:
    """Success-vs-distance curves for sorb / greedy_only / random on the
    same sampled pairs.  Horizon is the episode max_steps."""
    maxdist = cfg.maxdist if maxdist is None else maxdist
    ens.bind(grid)
    if roadmap is None:
        roadmap = rmod.build_roadmap(search_buffer, ens, maxdist)
    ps = sp.PolicyState(roadmap, ens)
    est = ens.members[0]
    ecfg = cfg.episode
    methods = ["sorb", "greedy_only"] + (["random"] if cfg.eval.include_random else [])
    pairs = sample_eval_pairs(grid, cfg.eval.distances, cfg.eval.trials_per_distance, seed)
    horizon = cfg.eval.horizon or ecfg.max_steps
    records = []
    for mi, method in enumerate(methods):
        for d, bucket in pairs.items():
            wins = 0
            steps = []
            for t, (s, g) in enumerate(bucket):
                rng = np.random.default_rng([seed, 7002, d, t, mi])
                res = _method_rollout(method, ps, est, grid, ecfg, s, g, rng, horizon)
                if res.success:
                    wins += 1
                    steps.append(res.steps)
            rate = wins / len(bucket)
            mean_steps = float(np.mean(steps)) if steps else None
            records.append(EvalRecord(method, seed, d, rate, mean_steps))
    return records


def write_eval_csv(path, records: list[EvalRecord], extra: Optional[dict] = None):
    """CSV with header method,seed,distance,success_rate,mean_steps; any
    extra columns are prepended (sweep axis, maze seed)."""
    extra = extra or {}
    cols = list(extra) + ["method", "seed", "distance", "success_rate", "mean_steps"]
    lines = [",".join(cols)]
    for r in records:
        vals = [str(v) for v in extra.values()]
        ms = "" if r.mean_steps is None else repr(r.mean_steps)
        vals += [r.method, str(r.seed), str(r.distance), repr(r.success_rate), ms]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_eval_csv(path) -> list[dict]:
    import csv as _csv

    with open(path, newline="") as f:
        rows = list(_csv.DictReader(f))
    for row in rows:
        row["seed"] = int(row["seed"])
        row["distance"] = int(row["distance"])
        row["success_rate"] = float(row["success_rate"])
        row["mean_steps"] = float(row["mean_steps"]) if row["mean_steps"] else None
    return rows


def write_loss_csv(path, rows):
    lines = ["step,loss,probe_success"]
    for step_i, loss, probe in rows:
        lines.append(f"{step_i},{loss!r},{probe}")
    Path(path).write_text("\n".join(lines) + "\n")


def success_svg_from_records(path, records: list[EvalRecord], distances, title):
    series = []
    for method in ("sorb", "greedy_only", "random"):
        rows = [r for r in records if r.method == method]
        if not rows:
            continue
        seeds = sorted({r.seed for r in rows})
        per_seed = []
        for sd in seeds:
            by_d = {r.distance: r.success_rate for r in rows if r.seed == sd}
            per_seed.append([by_d[d] for d in distances])
        mean = [float(np.mean([ys[i] for ys in per_seed])) for i in range(len(distances))]
        series.append(plots.Series(method, METHOD_COLORS[method], per_seed, mean))
    plots.write_success_svg(path, list(distances), series, title)


# ---------------------------------------------------------------------------
# Commands (exit-code discipline lives in cli; these raise ConfigError/OSError)


def _out_dir(cfg: RunConfig, override: Optional[str]) -> Path:
    out = Path(override or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ckpt_path(out: Path, seed: int) -> Path:
    return out / f"ensemble_seed{seed}.sorb"


def _nodes_path(out: Path, seed: int) -> Path:
    return out / f"search_buffer_seed{seed}.csv"


def write_nodes_csv(path, nodes: np.ndarray):
    lines = ["index,x,y"] + [f"{i},{x},{y}" for i, (x, y) in enumerate(nodes)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_nodes_csv(path) -> np.ndarray:
    import csv as _csv

    with open(path, newline="") as f:
        rows = list(_csv.DictReader(f))
    return np.array([[int(r["x"]), int(r["y"])] for r in rows], dtype=np.int32).reshape(-1, 2)


def cmd_train(cfg: RunConfig, out_override: Optional[str] = None, progress: bool = True) -> Path:
    out = _out_dir(cfg, out_override)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
    results = run_ordered([lambda s=s: train_run(cfg, s, progress) for s in cfg.seeds])
    for seed, res in zip(cfg.seeds, results):
        checkpoint.save_ensemble(res.ensemble, _ckpt_path(out, seed), cfg.map.canonical())
        write_nodes_csv(_nodes_path(out, seed), res.search_buffer.nodes)
        write_loss_csv(out / f"loss_seed{seed}.csv", res.loss_rows)
    return out


def resolve_map_arg(spec: str) -> GridMap:
    """--map value: a path to a map file, or a builtin name."""
    p = Path(spec)
    if p.suffix == ".map" or p.exists():
        return load_map_file(spec)
    try:
        return builtin_map(spec)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _grid_for_checkpoint(cfg: RunConfig, ckpt: Path, map_override: Optional[str]) -> GridMap:
    if map_override:
        return resolve_map_arg(map_override)
    name = checkpoint.read_map_name(ckpt)
    if name.startswith("file:"):
        return load_map_file(name[5:])
    if name.startswith("random_maze(size="):
        # multi-maze checkpoint: no single evaluation map; caller must override
        raise ConfigError(
            f"checkpoint {ckpt} was trained across mazes; pass --map to pick one"
        )
    return builtin_map(name)


def _load_run(cfg: RunConfig, out: Path, seed: int, grid: GridMap):
    ens = checkpoint.load_ensemble(_ckpt_path(out, seed), grid)
    nodes = read_nodes_csv(_nodes_path(out, seed))
    return ens, rmod.SearchBuffer(grid, nodes, "training-buffer")


def cmd_eval(
    cfg: RunConfig,
    checkpoint_dir: str,
    out_override: Optional[str] = None,
    map_override: Optional[str] = None,
) -> Path:
    """Evaluate saved checkpoints; writes eval.csv and success.svg."""
    out = _out_dir(cfg, out_override)
    ckpt_dir = Path(checkpoint_dir)
    records: list[EvalRecord] = []

    def one(seed):
        grid = _grid_for_checkpoint(cfg, _ckpt_path(ckpt_dir, seed), map_override)
        ens, sb = _load_run(cfg, ckpt_dir, seed, grid)
        return evaluate_policy(cfg, ens, sb, grid, seed)

    for recs in run_ordered([lambda s=s: one(s) for s in cfg.seeds]):
        records.extend(recs)
    write_eval_csv(out / "eval.csv", records)
    grid_name = map_override or cfg.map.canonical()
    success_svg_from_records(
        out / "success.svg", records, cfg.eval.distances, f"success vs goal distance ({grid_name})"
    )
    return out


def cmd_distcheck(
    cfg: RunConfig,
    checkpoint_dir: str,
    out_override: Optional[str] = None,
    map_override: Optional[str] = None,
) -> Path:
    """Per-pair audit of predicted vs oracle distance plus greedy rollout
    outcome; writes distcheck.csv."""
    out = _out_dir(cfg, out_override)
    ckpt_dir = Path(checkpoint_dir)
    lines = ["seed,oracle_distance,predicted_distance,success,steps"]
    for seed in cfg.seeds:
        grid = _grid_for_checkpoint(cfg, _ckpt_path(ckpt_dir, seed), map_override)
        ens, _ = _load_run(cfg, ckpt_dir, seed, grid)
        ens.bind(grid)
        for d in cfg.eval.distances:
            rng = np.random.default_rng([seed, 7003, int(d)])
            for t in range(cfg.eval.trials_per_distance):
                s, g = sample_pair_at_distance(grid, int(d), rng)
                pred = ens.aggregate_distance(s, g)
                res = sp.greedy_rollout(
                    ens.members[0], grid, cfg.episode, s, g,
                    np.random.default_rng([seed, 7004, int(d), t]),
                    horizon=cfg.eval.horizon or cfg.episode.max_steps,
                )
                lines.append(f"{seed},{d},{pred!r},{int(res.success)},{res.steps}")
    (out / "distcheck.csv").write_text("\n".join(lines) + "\n")
    return out


# ---------------------------------------------------------------------------
# Sweeps


def _subset_roadmap(full: rmod.Roadmap, size: int) -> rmod.Roadmap:
    if size >= len(full.buffer):
        return full
    return rmod.subset_roadmap(full, rmod.sparsify_indices(full, size))


def sweep_records(cfg: RunConfig, axis: str, ens: ValueEnsemble, sb: rmod.SearchBuffer, grid: GridMap, seed: int) -> list[EvalRecord]:
    """Evaluate one trained run across the settings of one ablation axis,
    reusing whatever the axis leaves unchanged (edge weights for maxdist,
    one big raw matrix for buffer subsets, member predictions for
    aggregation)."""
    ens.bind(grid)
    out = []
    if axis == "maxdist":
        base = rmod.build_roadmap(sb, ens, max(SWEEP_AXES[axis]))
        for v in SWEEP_AXES[axis]:
            rm = rmod.reprune(base, float(v))
            recs = evaluate_policy(cfg, ens, sb, grid, seed, maxdist=float(v), roadmap=rm)
            _tag(out, recs, axis, v)
    elif axis == "search_buffer_size":
        full = rmod.build_roadmap(sb, ens, cfg.maxdist)
        for v in SWEEP_AXES[axis]:
            rm = _subset_roadmap(full, int(v))
            recs = evaluate_policy(cfg, ens, rm.buffer, grid, seed, roadmap=rm)
            _tag(out, recs, axis, v)
    elif axis == "aggregation":
        for v in SWEEP_AXES[axis]:
            swept = ValueEnsemble(ens.members, EnsembleConfig(ens.config.size, v))
            recs = evaluate_policy(cfg, swept, sb, grid, seed)
            _tag(out, recs, axis, v)
    elif axis == "ensemble":
        for v in SWEEP_AXES[axis]:
            k = int(v)
            if k > ens.config.size:
                raise ConfigError(f"ensemble sweep needs {k} trained members, have {ens.config.size}")
            # members use index-keyed rng streams, so the first k of a
            # size-K run are bit-identical to a freshly trained size-k run
            swept = ValueEnsemble(ens.members[:k], EnsembleConfig(k, ens.config.aggregation))
            recs = evaluate_policy(cfg, swept, sb, grid, seed)
            _tag(out, recs, axis, v)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r} (choose from {sorted(SWEEP_AXES)})")
    return out


def _tag(out: list, recs: list[EvalRecord], axis: str, value) -> None:
    for r in recs:
        r.axis = axis
        r.setting = value
    out.extend(recs)


def write_sweep_csv(path, records):
    lines = ["axis,setting,method,seed,distance,success_rate,mean_steps"]
    for r in records:
        ms = "" if r.mean_steps is None else repr(r.mean_steps)
        lines.append(
            f"{r.axis},{r.setting},{r.method},{r.seed},{r.distance},{r.success_rate!r},{ms}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_sweep(
    cfg: RunConfig,
    checkpoint_dir: str,
    out_override: Optional[str] = None,
    map_override: Optional[str] = None,
) -> Path:
    axis = cfg.sweep_axis
    if not axis:
        raise ConfigError('sweep needs config {"sweep": {"axis": ...}}')
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r} (choose from {sorted(SWEEP_AXES)})")
    out = _out_dir(cfg, out_override)
    ckpt_dir = Path(checkpoint_dir)
    records = []
    if axis == "distributional":
        records = _distributional_sweep(cfg, ckpt_dir, map_override)
    else:
        def one(seed):
            grid = _grid_for_checkpoint(cfg, _ckpt_path(ckpt_dir, seed), map_override)
            ens, sb = _load_run(cfg, ckpt_dir, seed, grid)
            return sweep_records(cfg, axis, ens, sb, grid, seed)

        for recs in run_ordered([lambda s=s: one(s) for s in cfg.seeds]):
            records.extend(recs)
    write_sweep_csv(out / "sweep.csv", records)
    return out


def _distributional_sweep(cfg: RunConfig, ckpt_dir: Path, map_override):
    """on = the saved distributional run; off = a scalar-regression retrain
    with the same seeds and budget."""
    records = []
    scalar_backend = "scalar_mlp" if "mlp" in cfg.model.backend else "scalar_tabular"
    off_cfg = dataclasses.replace(
        cfg, model=dataclasses.replace(cfg.model, backend=scalar_backend)
    )

    def one_off(seed):
        res = train_run(off_cfg, seed)
        grid = res.maps[0]
        return evaluate_policy(off_cfg, res.ensemble, res.search_buffer, grid, seed)

    for seed in cfg.seeds:
        grid = _grid_for_checkpoint(cfg, _ckpt_path(ckpt_dir, seed), map_override)
        ens, sb = _load_run(cfg, ckpt_dir, seed, grid)
        recs = evaluate_policy(cfg, ens, sb, grid, seed)
        _tag(records, recs, "distributional", "on")
    for recs in run_ordered([lambda s=s: one_off(s) for s in cfg.seeds]):
        _tag(records, recs, "distributional", "off")
    return records


# ---------------------------------------------------------------------------
# Generalization to held-out mazes


def cmd_generalize(
    cfg: RunConfig,
    checkpoint_dir: str,
    out_override: Optional[str] = None,
) -> Path:
    """Evaluate a multi-maze checkpoint on held-out maze seeds with fresh
    random-walk search buffers; writes generalize.csv."""
    if not cfg.map.multi():
        raise ConfigError("generalize needs map.train_seeds in the config")
    heldout = cfg.map.heldout_seeds
    if not heldout:
        raise ConfigError("generalize needs map.heldout_seeds in the config")
    overlap = set(heldout) & set(cfg.map.train_seeds)
    if overlap:
        raise ConfigError(f"held-out maze seeds overlap training seeds: {sorted(overlap)}")
    out = _out_dir(cfg, out_override)
    ckpt_dir = Path(checkpoint_dir)

    def one(seed, maze_seed):
        grid = random_maze(maze_seed, cfg.map.size)
        ens, _ = _load_run(cfg, ckpt_dir, seed, grid)
        ens.bind(grid)
        walk_rng = np.random.default_rng([seed, 7006, maze_seed])
        sb = rmod.SearchBuffer.from_random_walks(
            grid, cfg.search_buffer_size, walk_rng, cfg.episode
        )
        return maze_seed, evaluate_policy(cfg, ens, sb, grid, seed)

    jobs = [lambda s=s, m=m: one(s, m) for s in cfg.seeds for m in heldout]
    lines = ["maze_seed,method,seed,distance,success_rate,mean_steps"]
    for maze_seed, recs in run_ordered(jobs):
        for r in recs:
            ms = "" if r.mean_steps is None else repr(r.mean_steps)
            lines.append(
                f"{maze_seed},{r.method},{r.seed},{r.distance},{r.success_rate!r},{ms}"
            )
    (out / "generalize.csv").write_text("\n".join(lines) + "\n")
    return out
