"""Seeded experiment runner, cross-run comparison and SVG plots.

A run directory looks like::

    <output_dir>/
      config.ini          resolved configuration
      summary.json        RunSummary (deterministic given config and seeds)
      timing.json         wall-clock per seed (kept apart so summaries stay bitwise stable)
      seed_<s>/eval.csv, episodes.csv, gaps.csv, online_offline.csv, agent.ckpt

Every file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import configparser
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .agents import Agent, AgentConfig
from .diagnostics import (
    CsvLog,
    atomic_write_text,
    average_q,
    estimate_bias,
    online_offline_gap,
    read_csv,
    record_target_gaps,
)
from .envs import Env, make_env
from .errors import ConfigError, EmptyPlotError, IncompleteError, ParseError
from .replay import ReplayBuffer
from .targets import TargetSpec

OUTDIR_ENV = "NSTEPAC_OUTDIR"
METRICS = ("max_avg_return", "final_return", "final_bias")


@dataclass
class ExperimentConfig:
    env_id: str = "pendulum"
    agent: AgentConfig = field(default_factory=AgentConfig)
    total_steps: int = 100_000
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    # one evaluation epoch
    eval_every: int = 4000
    eval_episodes: int = 10
    output_dir: str = ""
    probe_size: int = 1000
    bias_probes: int = 10
    bias_horizon: int = 200
    # diagnostics cadence in critic updates; 0 disables
    gap_every: int = 0
    gap_max_n: int = 5
    online_offline_every: int = 0
    online_offline_n: int = 8
    online_offline_batch: int = 64
    workers: int = 1

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.total_steps < self.agent.warmup_steps:
            raise ConfigError("total_steps must be >= warmup_steps")
        if self.eval_every < 1 or self.eval_episodes < 0:
            raise ConfigError("eval_every must be >= 1 and eval_episodes >= 0")
        if self.gap_max_n < 1 or self.online_offline_n < 1:
            raise ConfigError("diagnostic horizons must be >= 1")
        make_env(self.env_id)  # validates the id

    @property
    def label(self) -> str:
        return self.agent.target_spec.label

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        root = os.environ.get(OUTDIR_ENV, "runs")
        spec = str(self.agent.target_spec).replace(":", "-")
        return Path(root) / f"{self.env_id.replace(':', '_')}__{spec}"

    # config files ----------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        exp = {}
        for f in fields(self):
            if f.name == "agent":
                continue
            exp[f.name] = _render(getattr(self, f.name))
        cp["experiment"] = exp
        cp["agent"] = {k: _render(v) for k, v in self.agent.to_dict().items()}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file: {exc}") from exc
        exp_raw: Dict[str, str] = dict(cp["experiment"]) if cp.has_section("experiment") else {}
        agent_raw: Dict[str, str] = dict(cp["agent"]) if cp.has_section("agent") else {}
        for extra in cp.sections():
            if extra not in ("experiment", "agent"):
                raise ConfigError(f"unknown config section [{extra}]")
        exp_names = {f.name for f in fields(cls)} - {"agent"}
        agent_names = {f.name for f in fields(AgentConfig)}
        for item in overrides:
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            if key in exp_names:
                exp_raw[key] = value.strip()
            elif key in agent_names:
                agent_raw[key] = value.strip()
            else:
                raise ConfigError(f"unknown config key {key!r}")
        agent = AgentConfig(**_coerce(AgentConfig, agent_raw))
        return cls(agent=agent, **_coerce(cls, exp_raw, skip={"agent"}))

    @classmethod
    def from_file(cls, path: Union[str, Path], overrides: Sequence[str] = ()) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text, overrides)


def _render(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(cls, raw: Dict[str, str], skip: Iterable[str] = ()) -> dict:
    defaults = {
        f.name: f.default_factory() if f.default_factory is not MISSING else f.default for f in fields(cls)
    }
    out = {}
    for key, value in raw.items():
        if key in skip:
            continue
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        proto = defaults[key]
        try:
            if isinstance(proto, bool):
                out[key] = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(proto, int):
                out[key] = int(float(value)) if "e" in value.lower() else int(value)
            elif isinstance(proto, float):
                out[key] = float(value)
            elif isinstance(proto, tuple):
                out[key] = tuple(int(x) for x in value.split(",") if x.strip())
            elif isinstance(proto, TargetSpec):
                out[key] = TargetSpec.parse(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return out


# --- running ------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    eval_steps: List[int]
    eval_returns: List[float]
    eval_discounted: List[float]
    avg_q: List[float]
    bias: List[float]
    critic_updates: int
    total_fp: int
    total_bp: int
    wall_clock: float


@dataclass
class RunSummary:
    env_id: str
    variant: str
    target_spec: str
    seeds: List[int]
    eval_steps: List[int]
    curves: Dict[str, List[float]]
    mean_curve: List[float]
    std_curve: List[float]
    max_avg_return: float
    max_avg_return_std: float
    final_return_mean: float
    final_return_std: float
    final_bias: Dict[str, float]
    final_bias_mean: float
    counters: Dict[str, Dict[str, int]]
    wall_clock: float = 0.0

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("wall_clock")
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dir(cls, run_dir: Union[str, Path]) -> "RunSummary":
        path = Path(run_dir) / "summary.json"
        if not path.exists():
            raise IncompleteError(f"{run_dir} has no summary.json")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        timing = Path(run_dir) / "timing.json"
        if timing.exists():
            d["wall_clock"] = json.loads(timing.read_text()).get("total", 0.0)
        return cls(**d)


def evaluate(agent: Agent, env: Env, episodes: int, rng: np.random.Generator) -> Tuple[float, float]:
    """Mean undiscounted and discounted return of the noise-free policy."""
    if episodes == 0:
        return float("nan"), float("nan")
    gamma = agent.config.gamma
    totals, discounted = [], []
    for _ in range(episodes):
        obs = env.reset(seed=int(rng.integers(0, 2**31 - 1)))
        ret, dret, disc = 0.0, 0.0, 1.0
        while True:
            res = env.step(agent.select_action(obs, False))
            ret += res.reward
            dret += disc * res.reward
            disc *= gamma
            obs = res.next_obs
            if res.terminal or res.truncated:
                break
        totals.append(ret)
        discounted.append(dret)
    return float(np.mean(totals)), float(np.mean(discounted))


def _probe_obs(buffer: ReplayBuffer, size: int) -> np.ndarray:
    n = len(buffer)
    start = max(0, n - size)
    return np.stack([buffer.transition(i).obs for i in range(start, n)])


def run_seed(config: ExperimentConfig, seed: int, out_dir: Optional[Path] = None) -> SeedResult:
    """Train one seed and write its CSV logs and checkpoint."""
    t_start = time.perf_counter()
    ss = np.random.SeedSequence(seed)
    s_env, s_train, s_eval, s_diag = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    env = make_env(config.env_id, seed=s_env)
    eval_env = make_env(config.env_id, seed=s_eval)
    oo_env = make_env(config.env_id, seed=s_env)
    acfg = AgentConfig(**{**config.agent.to_dict(), "seed": seed})
    agent = Agent(env.spec, acfg)
    store_states = config.online_offline_every > 0
    buffer = ReplayBuffer(acfg.buffer_capacity, env.spec.obs_dim, env.spec.act_dim, store_states)
    train_rng = np.random.default_rng(s_train)
    eval_rng = np.random.default_rng(s_eval)
    diag_rng = np.random.default_rng(s_diag)

    out = out_dir or config.resolved_output_dir() / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    eval_log = CsvLog(out / "eval.csv", ["step", "eval_return", "eval_discounted_return", "avg_q", "bias",
                                         "mean_mc_return", "critic_updates"], "eval")
    ep_log = CsvLog(out / "episodes.csv", ["step", "episode_return", "episode_length"], "episodes")
    gap_cols = ["step", "critic_updates"]
    gap_cols += [f"gap_1_{i}" for i in range(2, config.gap_max_n + 1)]
    gap_cols += [f"target_{i}" for i in range(1, config.gap_max_n + 1)]
    gap_cols += ["mix_avg", "mix_min"]
    gap_log = CsvLog(out / "gaps.csv", gap_cols, "target_gaps")
    oo_log = CsvLog(out / "online_offline.csv", ["step", "critic_updates", "offline", "online", "gap"],
                    "online_offline")
    logs = [eval_log, ep_log, gap_log, oo_log]

    result = SeedResult(seed, [], [], [], [], [], 0, 0, 0, 0.0)
    eval_points = set(range(config.eval_every, config.total_steps + 1, config.eval_every))
    eval_points.add(config.total_steps)
    for step in range(1, config.total_steps + 1):
        rec = agent.train_step(buffer, env, train_rng)
        if rec.episode_return is not None:
            ep_log.append(step=step, episode_return=rec.episode_return, episode_length=rec.episode_length)
        if rec.critic_updates:
            u = agent.critic_updates
            if config.gap_every and u % config.gap_every == 0:
                batch = buffer.sample_batch(acfg.batch_size, config.gap_max_n, diag_rng)
                tg = record_target_gaps(agent, batch, config.gap_max_n)
                row = {"step": step, "critic_updates": u, "mix_avg": tg.mix_avg, "mix_min": tg.mix_min}
                row.update({f"gap_1_{i}": tg.gaps[i] for i in range(2, config.gap_max_n + 1)})
                row.update({f"target_{i}": tg.mean_targets[i] for i in range(1, config.gap_max_n + 1)})
                gap_log.append(**row)
            if config.online_offline_every and u % config.online_offline_every == 0:
                samples = buffer.sample_n(config.online_offline_batch, config.online_offline_n, diag_rng)
                off, on, gap = online_offline_gap(agent, oo_env, samples, config.online_offline_n)
                oo_log.append(step=step, critic_updates=u, offline=off, online=on, gap=gap)
        if step in eval_points:
            ret, dret = evaluate(agent, eval_env, config.eval_episodes, eval_rng)
            q = average_q(agent, _probe_obs(buffer, config.probe_size))
            be = estimate_bias(agent, eval_env, config.bias_probes, config.bias_horizon, eval_rng) \
                if config.bias_probes > 0 else None
            bias = be.bias if be else float("nan")
            eval_log.append(step=step, eval_return=ret, eval_discounted_return=dret, avg_q=q, bias=bias,
                            mean_mc_return=be.mean_mc_return if be else None, critic_updates=agent.critic_updates)
            result.eval_steps.append(step)
            result.eval_returns.append(ret)
            result.eval_discounted.append(dret)
            result.avg_q.append(q)
            result.bias.append(bias)
            for log in logs:
                log.flush()
    agent.save(out / "agent.ckpt")
    result.critic_updates = agent.critic_updates
    result.total_fp = agent.ledger.total_fp
    result.total_bp = agent.ledger.total_bp
    result.wall_clock = time.perf_counter() - t_start
    return result


def _run_seed_job(args) -> SeedResult:
    config, seed, out = args
    return run_seed(config, seed, out)


def summarize(config: ExperimentConfig, results: Sequence[SeedResult]) -> RunSummary:
    steps = results[0].eval_steps
    curves = np.array([r.eval_returns for r in results])
    mean, std = curves.mean(axis=0), curves.std(axis=0)
    best = int(np.argmax(mean))
    finals = curves[:, -1]
    final_bias = {str(r.seed): r.bias[-1] for r in results}
    return RunSummary(
        env_id=config.env_id,
        variant=config.label,
        target_spec=str(config.agent.target_spec),
        seeds=[r.seed for r in results],
        eval_steps=list(steps),
        curves={str(r.seed): list(r.eval_returns) for r in results},
        mean_curve=mean.tolist(),
        std_curve=std.tolist(),
        max_avg_return=float(mean[best]),
        max_avg_return_std=float(std[best]),
        final_return_mean=float(finals.mean()),
        final_return_std=float(finals.std()),
        final_bias=final_bias,
        final_bias_mean=float(np.mean(list(final_bias.values()))),
        counters={
            str(r.seed): {"critic_updates": r.critic_updates, "total_fp": r.total_fp, "total_bp": r.total_bp}
            for r in results
        },
        wall_clock=float(sum(r.wall_clock for r in results)),
    )


def run_experiment(config: ExperimentConfig) -> RunSummary:
    root = config.resolved_output_dir()
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {root} is not writable: {exc}") from exc
    atomic_write_text(root / "config.ini", config.to_ini())
    jobs = [(config, s, root / f"seed_{s}") for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]
    summary = summarize(config, results)
    atomic_write_text(root / "summary.json", summary.to_json())
    timing = {"per_seed": {str(r.seed): r.wall_clock for r in results}, "total": summary.wall_clock}
    atomic_write_text(root / "timing.json", json.dumps(timing, indent=2))
    return summary


def load_config(run_dir: Union[str, Path]) -> ExperimentConfig:
    path = Path(run_dir) / "config.ini"
    if not path.exists():
        raise IncompleteError(f"{run_dir} has no config.ini")
    return ExperimentConfig.from_file(path)


def recompute_max_avg_return(run_dir: Union[str, Path]) -> Tuple[float, float]:
    """Max over evaluation points of the cross-seed mean, straight from eval CSVs."""
    run_dir = Path(run_dir)
    seed_dirs = sorted(p for p in run_dir.iterdir() if p.is_dir() and p.name.startswith("seed_"))
    if not seed_dirs:
        raise IncompleteError(f"{run_dir} has no seed directories")
    curves = [[float(r["eval_return"]) for r in read_csv(d / "eval.csv")] for d in seed_dirs]
    arr = np.array(curves)
    mean, std = arr.mean(axis=0), arr.std(axis=0)
    i = int(np.argmax(mean))
    return float(mean[i]), float(std[i])


# --- comparison -----------------------------------------------------------------


@dataclass
class CompareRow:
    env_id: str
    variant: str
    run_dir: str
    mean: float
    std: float
    best: bool = False


def compare(run_dirs: Sequence[Union[str, Path]], metric: str = "max_avg_return") -> List[CompareRow]:
    """Cross-run table of ``metric`` (mean and std over seeds), best per env marked.

    Higher is better for returns; for ``final_bias`` the value closest to
    zero wins.
    """
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; choose from {METRICS}")
    if not run_dirs:
        raise IncompleteError("no runs given")
    rows = []
    for d in run_dirs:
        s = RunSummary.from_dir(d)
        if metric == "max_avg_return":
            m, sd = s.max_avg_return, s.max_avg_return_std
        elif metric == "final_return":
            m, sd = s.final_return_mean, s.final_return_std
        else:
            vals = np.array(list(s.final_bias.values()))
            m, sd = float(vals.mean()), float(vals.std())
        rows.append(CompareRow(s.env_id, s.variant, str(d), m, sd))
    for env_id in {r.env_id for r in rows}:
        group = [r for r in rows if r.env_id == env_id]
        key = (lambda r: -abs(r.mean)) if metric == "final_bias" else (lambda r: r.mean)
        max(group, key=key).best = True
    return rows


def format_table(rows: Sequence[CompareRow], metric: str) -> str:
    lines = [f"{'env':<16} {'variant':<20} {metric:>26}  best", "-" * 70]
    for r in sorted(rows, key=lambda r: (r.env_id, r.variant)):
        cell = f"{r.mean:.3f} +- {r.std:.3f}"
        lines.append(f"{r.env_id:<16} {r.variant:<20} {cell:>26}  {'*' if r.best else ''}")
    return "\n".join(lines)


# --- plots ------------------------------------------------------------------------


def curve_band(curves: Sequence[Sequence[float]]) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-seed mean and half standard deviation per evaluation point."""
    if len(curves) == 0:
        raise EmptyPlotError("no curves to plot")
    arr = np.asarray(curves, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise EmptyPlotError("curves must be non-empty and of equal length")
    return arr.mean(axis=0), 0.5 * arr.std(axis=0)


_PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def render_svg(
    series: Sequence[Tuple[str, Sequence[float], Sequence[Sequence[float]]]],
    title: str,
    xlabel: str = "environment steps",
    ylabel: str = "",
    width: int = 640,
    height: int = 400,
) -> str:
    """Line plot with shaded half-std bands.  ``series`` holds (label, x, curves)."""
    if not series:
        raise EmptyPlotError("no series to plot")
    bands = []
    for label, xs, curves in series:
        center, half = curve_band(curves)
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape != center.shape:
            raise EmptyPlotError(f"series {label!r}: x and curve lengths differ")
        bands.append((label, xs, center, half))
    x_all = np.concatenate([b[1] for b in bands])
    lo = np.concatenate([b[2] - b[3] for b in bands])
    hi = np.concatenate([b[2] + b[3] for b in bands])
    x0, x1 = float(x_all.min()), float(x_all.max())
    y0, y1 = float(lo.min()), float(hi.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    ml, mr, mt, mb = 70, 150, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{_esc(xlabel)}</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        xv = x0 + (x1 - x0) * k / 4
        parts.append(f'<text x="{ml - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
        parts.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
    for idx, (label, xs, center, half) in enumerate(bands):
        color = _PALETTE[idx % len(_PALETTE)]
        upper = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, center + half)]
        lower = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs[::-1], (center - half)[::-1])]
        parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, center))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 16 * idx
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 32}" y="{ly}">{_esc(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _seed_csvs(run_dir: Path, name: str) -> List[List[Dict[str, str]]]:
    seed_dirs = sorted(p for p in run_dir.iterdir() if p.is_dir() and p.name.startswith("seed_"))
    out = []
    for d in seed_dirs:
        path = d / name
        if path.exists():
            out.append(read_csv(path))
    return out


def _float(row: Dict[str, str], key: str) -> float:
    try:
        return float(row[key])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"column {key!r} missing or not numeric") from exc


def emit_plots(run_dirs: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> List[Path]:
    """Return curves, average-Q curves and (when logged) target-gap curves as SVG."""
    if not run_dirs:
        raise EmptyPlotError("no runs to plot")
    out_dir = Path(out_dir)
    returns, qs, gaps = [], [], []
    for d in map(Path, run_dirs):
        label = load_config(d).label
        evals = _seed_csvs(d, "eval.csv")
        if not evals or not evals[0]:
            raise EmptyPlotError(f"{d} has no evaluation rows")
        xs = [_float(r, "step") for r in evals[0]]
        returns.append((label, xs, [[_float(r, "eval_return") for r in e] for e in evals]))
        qs.append((label, xs, [[_float(r, "avg_q") for r in e] for e in evals]))
        gap_logs = [g for g in _seed_csvs(d, "gaps.csv") if g]
        if gap_logs:
            length = min(len(g) for g in gap_logs)
            gx = [_float(r, "step") for r in gap_logs[0][:length]]
            for col in [c for c in gap_logs[0][0] if c.startswith("gap_1_")]:
                gaps.append((f"{label} {col}", gx, [[_float(r, col) for r in g[:length]] for g in gap_logs]))
    written = []
    plots = [("returns.svg", returns, "Evaluation return", "return"),
             ("avg_q.svg", qs, "Average Q-value", "Q")]
    if gaps:
        plots.append(("gaps.svg", gaps, "1-step minus multi-step target", "gap"))
    svgs = [(name, render_svg(series, title, ylabel=ylabel)) for name, series, title, ylabel in plots]
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, svg in svgs:
        atomic_write_text(out_dir / name, svg)
        written.append(out_dir / name)
    return written
