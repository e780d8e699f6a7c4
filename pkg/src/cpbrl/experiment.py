"""Experiment configuration and the pipeline stages behind the command line.

One master seed is fanned out to every stage and run with
:func:`stage_seed`, so a config plus a seed reproduces all artifacts. Every
file is written through a temporary name and renamed into place.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import classical, gp, nfq, pso
from .dynamics import (DT, DomainError, TrueDynamics, gen_batch, load_batch, load_states, reward_array,
                       save_batch, step_array)
from .neural import TrainConfig
from .policies import ZeroPolicy, describe, load_policy, save_policy, serialize
from .surrogate import WorldModel, fit, holdout_report, policy_returns

log = logging.getLogger(__name__)

METHODS = ("lqr", "pid", "psop", "nfq", "psonn", "fpsrl", "fgprl", "gprl")
DETERMINISTIC = ("lqr", "pid")
# Column order of the comparison table; NFQ contributes two rows.
TABLE_ORDER = ("lqr", "pid", "psop", "nfq_last", "nfq_selected", "psonn", "fpsrl", "fgprl", "gprl")
TABLE_LABELS = {"lqr": "LQR", "pid": "PID", "psop": "PSO-P", "nfq_last": "NFQ (last)",
                "nfq_selected": "NFQ (selected)", "psonn": "PSONN", "fpsrl": "FPSRL",
                "fgprl": "FGPRL", "gprl": "GPRL"}


class ConfigError(DomainError):
    pass


# configuration ----------------------------------------------------------------
@dataclass
class ModelSection:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 0.01
    lr_decay: float = 0.5
    decay_every: int = 100
    momentum: float = 0.9
    patience: int = 40
    holdout: int = 2000


@dataclass
class LqrSection:
    q: list = field(default_factory=lambda: [10.0, 1.0, 1.0, 1.0])
    r: float = 0.1


@dataclass
class PidSection:
    windows: dict = field(default_factory=lambda: dict(classical.REFERENCE_WINDOWS))
    mix: dict = field(default_factory=lambda: dict(classical.REFERENCE_MIX))
    theta_bounds: list = field(default_factory=lambda: [-60.0, 0.0])
    rho_bounds: list = field(default_factory=lambda: [-150.0, 0.0])
    max_steps: int = 2000
    fallback: bool = True


@dataclass
class NfqSection:
    iterations: int = 20
    actions: list = field(default_factory=lambda: list(nfq.DEFAULT_ACTIONS))
    hidden: list = field(default_factory=lambda: [20, 20])
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.01
    patience: int = 15
    warm_start: bool = False


@dataclass
class PsopSection:
    horizon: int = 50
    particles: int = 16
    iterations: int = 15


@dataclass
class PsonnSection:
    hidden: list = field(default_factory=lambda: [8])
    weight_bound: float = 3.0
    particles: int = 30
    iterations: int = 100


@dataclass
class FpsrlSection:
    rules: int = 2
    particles: int = 30
    iterations: int = 100


@dataclass
class GpSection:
    population: int = 500
    generations: int = 100
    tournament: int = 5
    p_crossover: float = 0.8
    p_mutation: float = 0.15
    p_reproduction: float = 0.05
    max_depth: int = 8


SECTIONS = {"model": ModelSection, "lqr": LqrSection, "pid": PidSection, "nfq": NfqSection,
            "psop": PsopSection, "psonn": PsonnSection, "fpsrl": FpsrlSection, "gprl": GpSection,
            "fgprl": GpSection}


@dataclass
class ExperimentConfig:
    seed: int = 0
    gamma: float = 0.97
    horizon: int = 100
    batch_size: int = 10_000
    dt: float = DT
    test_states: str | None = None
    runs: int = 10
    model: ModelSection = field(default_factory=ModelSection)
    lqr: LqrSection = field(default_factory=LqrSection)
    pid: PidSection = field(default_factory=PidSection)
    nfq: NfqSection = field(default_factory=NfqSection)
    psop: PsopSection = field(default_factory=PsopSection)
    psonn: PsonnSection = field(default_factory=PsonnSection)
    fpsrl: FpsrlSection = field(default_factory=FpsrlSection)
    gprl: GpSection = field(default_factory=GpSection)
    fgprl: GpSection = field(default_factory=GpSection)

    def validate(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma: must lie in (0, 1]")
        if self.horizon < 1:
            raise ConfigError("horizon: must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if self.runs < 1:
            raise ConfigError("runs: must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt: must be positive")
        if self.test_states is not None and not Path(self.test_states).exists():
            raise ConfigError(f"test_states: file {self.test_states} does not exist")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _typed(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, (list, dict)) and not isinstance(value, type(default)):
        raise ConfigError(f"{where}: expected a {type(default).__name__}, got {value!r}")
    return value


def _fill(obj, data, where=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if key not in names:
            raise ConfigError(f"{path}: unknown field")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _fill(current, value, path)
        elif key == "test_states":
            setattr(obj, key, None if value is None else str(value))
        else:
            setattr(obj, key, _typed(value, current, path))
    return obj


def config_from_dict(data: dict | None) -> ExperimentConfig:
    return _fill(ExperimentConfig(), data or {}).validate()


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {p} is not valid YAML: {exc}") from exc
    return config_from_dict(data)


def stage_seed(master: int, *names) -> int:
    """Deterministic 32-bit seed for a named stage (and optional run index)."""
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return int(np.random.SeedSequence(int(master), spawn_key=key).generate_state(1)[0])


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# workspace -----------------------------------------------------------------------
class Workspace:
    """Artifact layout under one output directory."""

    def __init__(self, out, cfg: ExperimentConfig, force: bool = False):
        self.root = Path(out)
        self.cfg = cfg
        self.force = force
        self._model = None
        self._batch = None
        self._states = None

    @property
    def batch_path(self) -> Path:
        return self.root / "batch.csv"

    @property
    def model_dir(self) -> Path:
        return self.root / "model"

    def policy_path(self, name: str, run: int = 0) -> Path:
        return self.root / "policies" / (f"{name}.json" if run == 0 else f"{name}_run{run}.json")

    def test_states(self) -> np.ndarray:
        if self._states is None:
            self._states = load_states(self.cfg.test_states)
        return self._states

    def batch(self, path=None):
        if path is not None:
            return _load_batch_checked(path)
        if self._batch is None:
            self._batch = _load_batch_checked(self.batch_path)
        return self._batch

    def model(self, path=None) -> WorldModel:
        if path is not None:
            return _load_model_checked(path)
        if self._model is None:
            self._model = _load_model_checked(self.model_dir)
        return self._model


def _load_batch_checked(path):
    p = Path(path)
    if not p.exists():
        raise DomainError(f"batch file {p} not found (run gen-data first)")
    try:
        return load_batch(p)
    except (KeyError, ValueError) as exc:
        raise DomainError(f"cannot read batch {p}: {exc}") from exc


def _load_model_checked(path):
    p = Path(path)
    if not (p / "stats.json").exists():
        raise DomainError(f"world model {p} not found (run train-model first)")
    return WorldModel.load(p)


# stages --------------------------------------------------------------------------
def reward_histogram(R) -> dict:
    return {"0": int(np.sum(R == 0.0)), "-0.1": int(np.sum(np.isclose(R, -0.1))), "-1": int(np.sum(R == -1.0))}


def run_gen_data(ws: Workspace, n: int | None = None, out=None) -> dict:
    cfg = ws.cfg
    path = Path(out) if out else ws.batch_path
    if path.exists() and not ws.force:
        raise DomainError(f"{path} exists (use --force to overwrite)")
    n = cfg.batch_size if n is None else n
    if n < 1:
        raise ConfigError("n: must be >= 1")
    batch = gen_batch(n, seed=stage_seed(cfg.seed, "gen-data"), dt=cfg.dt)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_batch(batch, path)
    R = batch.arrays()[3]
    return {"path": str(path), "samples": len(batch), "rewards": reward_histogram(R)}


def model_train_config(cfg: ExperimentConfig) -> TrainConfig:
    m = cfg.model
    return TrainConfig(epochs=m.epochs, batch_size=m.batch_size, lr=m.lr, lr_decay=m.lr_decay,
                       decay_every=m.decay_every, momentum=m.momentum, patience=m.patience,
                       seed=stage_seed(cfg.seed, "train-model") % 100_000)


def run_train_model(ws: Workspace, batch_path=None, out=None) -> dict:
    cfg = ws.cfg
    out = Path(out) if out else ws.model_dir
    if (out / "stats.json").exists() and not ws.force:
        return {"path": str(out), "skipped": True}
    batch = ws.batch(batch_path)
    model = fit(batch, model_train_config(cfg))
    holdout = gen_batch(cfg.model.holdout, seed=stage_seed(cfg.seed, "holdout"), dt=cfg.dt)
    report = holdout_report(model, holdout)
    model.meta["holdout"] = report
    tmp = out.with_name(out.name + ".tmp")
    if tmp.exists():
        for f in tmp.iterdir():
            f.unlink()
    model.save(tmp)
    if out.exists():
        for f in out.iterdir():
            f.unlink()
        out.rmdir()
    tmp.replace(out)
    ws._model = model
    return {"path": str(out), "skipped": False, **report}


@dataclass
class Synthesis:
    policies: dict  # name -> Policy
    lines: list  # human-readable summary
    files: list = field(default_factory=list)


def synthesize(method: str, ws: Workspace, run: int = 0, batch_path=None, model_path=None) -> Synthesis:
    """Build the policy (or policies) of ``method`` for run index ``run``."""
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    cfg = ws.cfg
    seed = stage_seed(cfg.seed, "synthesize", method, run)
    T, gamma = cfg.horizon, cfg.gamma
    lines = []
    if method == "lqr":
        lm = classical.fit_linear_model(ws.batch(batch_path))
        weights = classical.LqrWeights(np.diag(cfg.lqr.q), [[cfg.lqr.r]])
        P, K = classical.solve_dare(lm.U, lm.V, weights.Q, weights.R)
        pol = classical.LinearPolicy(-K.reshape(-1))
        res = classical.dare_residual(P, lm.U, lm.V, weights.Q, weights.R)
        lines += [f"a = {serialize(pol)}", f"DARE residual {res:.3g}", f"fit residual {lm.residual:.6g}"]
        return Synthesis({"lqr": pol}, lines)
    if method == "nfq":
        c = cfg.nfq
        fcfg = nfq.FqiConfig(iterations=c.iterations, gamma=gamma, actions=tuple(c.actions), hidden=tuple(c.hidden),
                             warm_start=c.warm_start, seed=seed % 100_000,
                             train=TrainConfig(epochs=c.epochs, batch_size=c.batch_size, lr=c.lr,
                                               decay_every=max(1, c.epochs // 2), patience=c.patience))
        _, checkpoints = nfq.fqi_run(ws.batch(batch_path), fcfg)
        sel = nfq.select_policy(checkpoints, ws.model(model_path), ws.test_states(), T, gamma)
        lines.append(f"selected checkpoint {sel.selected_index} of {len(checkpoints)}")
        lines += [f"  iteration {k:3d}: model penalty {p:.4f}" for k, p in enumerate(sel.penalties)]
        return Synthesis({"nfq_last": sel.last, "nfq_selected": sel.selected}, lines, [("nfq_report", sel.report())])
    model = ws.model(model_path)
    states = ws.test_states()
    if method == "pid":
        c = cfg.pid
        tuning = classical.PidTuning(
            search=classical.CriticalSearch(bounds=tuple(c.theta_bounds), max_steps=c.max_steps, growth_tolerance=math.inf),
            rho_search=classical.CriticalSearch(bounds=tuple(c.rho_bounds), max_steps=c.max_steps,
                                                growth_tolerance=math.inf),
            windows=dict(c.windows), mix=dict(c.mix), fallback=c.fallback)
        pol, info = classical.tune_pid(model, tuning)
        lines += [f"theta critical point k={info['theta'].k_c:.4g} period={info['theta'].p_c:.4g} steps",
                  f"rho critical point k={info['rho'].k_c:.4g} period={info['rho'].p_c:.4g} steps ({info['rho_source']})",
                  serialize(pol)]
        return Synthesis({"pid": pol}, lines)
    if method == "psop":
        c = cfg.psop
        swarm = pso.SwarmConfig(particles=c.particles, iterations=c.iterations, low=-10.0, high=10.0, seed=seed % 100_000)
        mp = Path(model_path) if model_path else ws.model_dir
        pol = pso.PsoPlanner(model, pso.PlannerConfig(c.horizon, gamma, swarm), str(mp.resolve()))
        lines.append(f"receding-horizon planner, horizon {c.horizon}, {c.particles} particles x {c.iterations} iterations")
        return Synthesis({"psop": pol}, lines)
    if method == "psonn":
        c = cfg.psonn
        swarm = pso.SwarmConfig(particles=c.particles, iterations=c.iterations, seed=seed % 100_000)
        pol, res = pso.train_psonn(model, states, pso.PsonnConfig(tuple(c.hidden), c.weight_bound, T, gamma, swarm))
        lines.append(f"best model penalty {-res.score:.4f}")
        return Synthesis({"psonn": pol}, lines, [("history", res.history)])
    if method == "fpsrl":
        c = cfg.fpsrl
        swarm = pso.SwarmConfig(particles=c.particles, iterations=c.iterations, seed=seed % 100_000)
        pol, res = pso.train_fpsrl(model, states, ws.batch(batch_path), pso.FpsrlConfig(c.rules, T=T, gamma=gamma, swarm=swarm))
        lines += [f"best model penalty {-res.score:.4f}", describe(pol)]
        return Synthesis({"fpsrl": pol}, lines, [("history", res.history)])
    c = getattr(cfg, method)
    gcfg = gp.GpConfig(population=c.population, generations=c.generations, tournament=c.tournament,
                       p_crossover=c.p_crossover, p_mutation=c.p_mutation, p_reproduction=c.p_reproduction,
                       max_depth=c.max_depth, function_set="algebraic" if method == "gprl" else "fuzzy",
                       seed=seed % 100_000)
    result = gp.evolve(None, gcfg, batch_fitness=gp.model_fitness(model, states, T, gamma))
    pol = gp.TreePolicy(result.best.genome)
    lines += ["Pareto front (complexity, model penalty, policy):", gp.describe_front(result.front),
              f"best: {describe(pol)}"]
    return Synthesis({method: pol}, lines, [("front", result.front)])


def save_synthesis(ws: Workspace, syn: Synthesis, run: int = 0) -> list:
    written = []
    for name, pol in syn.policies.items():
        path = ws.policy_path(name, run)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists() and not ws.force:
            raise DomainError(f"{path} exists (use --force to overwrite)")
        save_policy(pol, path)
        written.append(path)
    stem = next(iter(syn.policies)).split("_")[0]
    suffix = "" if run == 0 else f"_run{run}"
    for kind, payload in syn.files:
        if kind == "front":
            gp.export_front(payload, ws.root / "fronts" / f"{stem}{suffix}", ws.test_states(),
                            ws.cfg.horizon, ws.cfg.gamma)
            written.append(ws.root / "fronts" / f"{stem}{suffix}" / "front.csv")
        elif kind == "history":
            p = ws.root / "history" / f"{stem}{suffix}.csv"
            p.parent.mkdir(parents=True, exist_ok=True)
            pso.write_history(payload, p)
            written.append(p)
        elif kind == "nfq_report":
            p = ws.root / "policies" / f"nfq_selection{suffix}.json"
            _atomic_text(p, json.dumps(payload, indent=1) + "\n")
            written.append(p)
    return written


def evaluate(policy, evaluator: str, ws: Workspace, model_path=None) -> dict:
    """Penalty of ``policy`` on the model or the true system, with per-state values."""
    if evaluator not in ("model", "system"):
        raise DomainError(f"unknown evaluator {evaluator!r}; use model or system")
    stepper = ws.model(model_path) if evaluator == "model" else TrueDynamics(ws.cfg.dt)
    returns = policy_returns(stepper, policy, ws.test_states(), ws.cfg.horizon, ws.cfg.gamma)
    return {"kind": policy.kind, "evaluator": evaluator, "penalty": float(-returns.mean()),
            "per_state": [float(-r) for r in returns], "T": ws.cfg.horizon, "gamma": ws.cfg.gamma}


def load_policy_checked(path):
    p = Path(path)
    if not p.exists():
        raise DomainError(f"policy file {p} not found")
    try:
        return load_policy(p)
    except (KeyError, ValueError) as exc:
        raise DomainError(f"cannot load policy {p}: {exc}") from exc


# comparison ------------------------------------------------------------------------
@dataclass
class ComparisonRow:
    method: str
    model: list = field(default_factory=list)
    system: list = field(default_factory=list)
    note: str = ""

    @property
    def runs(self) -> int:
        return len(self.model)

    @staticmethod
    def _stats(v):
        if not v:
            return math.nan, math.nan
        mean = float(np.mean(v))
        se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) >= 2 else math.nan
        return mean, se

    def summary(self) -> dict:
        mm, ms = self._stats(self.model)
        sm, ss = self._stats(self.system)
        return {"method": TABLE_LABELS.get(self.method, self.method), "model_mean": mm, "model_se": ms,
                "system_mean": sm, "system_se": ss, "runs": self.runs, "note": self.note}


def run_compare(ws: Workspace, methods=None, runs: int | None = None, progress=None) -> list:
    methods = list(methods or METHODS)
    for m in methods:
        if m not in METHODS:
            raise DomainError(f"unknown method {m!r}")
    runs = ws.cfg.runs if runs is None else runs
    if runs < 1:
        raise DomainError("runs must be >= 1")
    # A fresh output directory gets its batch and model first.
    if not ws.batch_path.exists():
        run_gen_data(ws)
    if not (ws.model_dir / "stats.json").exists():
        run_train_model(ws)
    rows = {}
    for method in methods:
        n = 1 if method in DETERMINISTIC else runs
        for run in range(n):
            try:
                syn = synthesize(method, ws, run)
                save_synthesis(ws, syn, run)
            except (DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
                for name in (("nfq_last", "nfq_selected") if method == "nfq" else (method,)):
                    rows.setdefault(name, ComparisonRow(name)).note = f"failed: {exc}"
                continue
            for name, pol in syn.policies.items():
                row = rows.setdefault(name, ComparisonRow(name))
                row.model.append(evaluate(pol, "model", ws)["penalty"])
                row.system.append(evaluate(pol, "system", ws)["penalty"])
                if progress:
                    progress(name, run, row.model[-1], row.system[-1])
    zero = ZeroPolicy()
    out = [rows[k] for k in TABLE_ORDER if k in rows]
    for row in out:
        if row.method == "psop" and row.model and np.mean(row.model) < np.mean(row.system):
            row.note = row.note or "model penalty below system penalty (planner exploits the model)"
    baseline = ComparisonRow("zero", [evaluate(zero, "model", ws)["penalty"]], [evaluate(zero, "system", ws)["penalty"]])
    return out + [baseline]


def format_table(rows) -> str:
    def cell(mean, se):
        if math.isnan(mean):
            return "-"
        return f"{mean:.2f}" if math.isnan(se) else f"{mean:.2f} ± {se:.2f}"

    sums = [r.summary() for r in rows]
    head = ["", *[s["method"] for s in sums]]
    body = [["Model", *[cell(s["model_mean"], s["model_se"]) for s in sums]],
            ["System", *[cell(s["system_mean"], s["system_se"]) for s in sums]]]
    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [head, *body]]
    notes = [f"{s['method']}: {s['note']}" for s in sums if s["note"]]
    return "\n".join(lines + ([""] + notes if notes else []))


def write_table(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    names = ["method", "model_mean", "model_se", "system_mean", "system_se", "runs", "note"]
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in rows:
            w.writerow(r.summary())
    tmp.replace(path)


# trajectories ----------------------------------------------------------------------
def parse_state(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",")]
    except ValueError as exc:
        raise DomainError(f"cannot parse start state {text!r}") from exc
    if len(vals) != 4 or not all(map(math.isfinite, vals)):
        raise DomainError(f"start state needs four finite numbers, got {text!r}")
    return np.array(vals)


def parse_schedule(text: str | None) -> list:
    """``"200:1.0,300:0"`` -> ``[(200, 1.0), (300, 0.0)]`` (position setpoints from a step on)."""
    if not text:
        return []
    out = []
    try:
        for part in text.split(","):
            step, value = part.split(":")
            out.append((int(step), float(value)))
    except ValueError as exc:
        raise DomainError(f"cannot parse setpoint schedule {text!r}") from exc
    return sorted(out)


def rollout(policy, start, steps: int, schedule=(), dt: float = DT) -> list:
    """Simulate on the true dynamics. The policy sees the position relative to
    the current setpoint and rewards use that relative position."""
    if steps < 1:
        raise DomainError("steps must be >= 1")
    x = np.asarray(start, dtype=float)[None]
    failed = np.zeros(1, bool)
    if hasattr(policy, "reset"):
        policy.reset(1)
    rows, sp = [], 0.0
    for t in range(steps):
        for when, value in schedule:
            if t >= when:
                sp = value
        shift = np.array([0.0, 0.0, sp, 0.0])
        a = float(policy.act(x - shift)[0])
        x_next, failed_next = step_array(x, failed, np.array([a]), dt)
        r = float(reward_array(x_next - shift, failed_next)[0])
        rows.append({"step": t, "theta": x[0, 0], "theta_dot": x[0, 1], "rho": x[0, 2], "rho_dot": x[0, 3],
                     "action": a, "reward": r, "setpoint": sp})
        x, failed = x_next, failed_next
    return rows


def write_rollout(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    tmp.replace(path)
