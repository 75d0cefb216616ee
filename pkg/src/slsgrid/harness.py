"""Closed-loop trials of the four grid controllers, cost accounting and reports.

Controllers, all on identical plants, setpoint schedules and disturbances:

* ``UnsatCenLin``: stationary LQR tracking law with no actuator limit
  (the normalization reference),
* ``SatCenLin``: the same law clamped to ``u_max``,
* ``CenMPC``: centralized MPC re-solved every step,
* ``LocLayered``: localized MPC every ``t_mpc`` steps plus offline SLS tracking.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SlsError
from .layered import build_layered_controller, count_online_solves, layered_step
from .mpc import MpcProblem, mpc_solve_centralized
from .opf import Setpoint, sample_load_profile, solve_dc_opf
from .optimization import AdmmConfig
from .plant import STATE_DIM, dump_plant, generate_plant, load_plant, step_dynamics
from .runtime import linear_tracking_step, saturate, stationary_lqr

CONTROLLERS = ("UnsatCenLin", "SatCenLin", "CenMPC", "LocLayered")
OUT_ENV = "SLSGRID_OUT"


@dataclass(frozen=True)
class SimConfig:
    rows: int = 5
    cols: int = 5
    seed: int = 0
    dt: float = 0.2
    extra_edge_prob: float = 0.3
    # u_max <= 0 selects auto-calibration: u_max_factor times the peak input of an
    # unconstrained dry run of the first setpoint change
    u_max: float = 0.0
    u_max_factor: float = 0.6
    q_weight: str = "identity"
    r_weight: str = "identity"
    horizon: int = 20
    t_mpc: int = 20
    d: int = 2
    # disturbance_std < 0 selects disturbance_rel times the RMS dry-run input deviation
    disturbance_std: float = -1.0
    disturbance_rel: float = 0.05
    setpoint_magnitude: float = 1.0
    num_periods: int = 5
    trials: int = 30
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    max_iters: int = 5000
    divergence_threshold: float = 1e6
    probe_node: int = -1
    workers: int = 1

    def __post_init__(self):
        for name in ("rows", "cols", "horizon", "t_mpc", "num_periods", "trials", "max_iters",
                     "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.d < 0:
            raise ValueError("d must be non-negative")
        if self.dt <= 0 or self.u_max_factor <= 0 or self.eps_primal <= 0 or self.eps_dual <= 0:
            raise ValueError("dt, u_max_factor and tolerances must be positive")
        if self.t_mpc > self.horizon:
            raise ValueError("t_mpc cannot exceed the horizon")

    @property
    def sim_length(self):
        return self.num_periods * self.t_mpc

    @property
    def admm(self):
        return AdmmConfig(eps_primal=self.eps_primal, eps_dual=self.eps_dual,
                          max_iters=self.max_iters)


def _coerce(field_type, raw):
    if field_type in (int, "int"):
        return int(raw)
    if field_type in (float, "float"):
        return float(raw)
    return str(raw)


def config_fields():
    return [(f.name, f.type, f.default) for f in dataclasses.fields(SimConfig)]


def parse_config(text, overrides=None):
    """``key = value`` lines (``#`` comments allowed) into a :class:`SimConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[sim]\n" + text)
    known = {name: ftype for name, ftype, _ in config_fields()}
    values = {}
    for key, raw in parser["sim"].items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(known[key], raw)
    values.update(overrides or {})
    return SimConfig(**values)


def format_config(config):
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(config).items())


def weight_matrix(selector, nodes, per_node):
    """``identity``, a positive scalar multiple of it, or comma-separated per-node diagonals."""
    sel = str(selector).strip().lower()
    if sel == "identity":
        return np.eye(nodes * per_node)
    vals = [float(v) for v in sel.split(",")]
    if len(vals) == 1:
        vals = vals * per_node
    if len(vals) != per_node or min(vals) <= 0:
        raise ValueError(f"bad weight selector {selector!r}")
    return np.diag(np.tile(vals, nodes))


@dataclass
class TrialResult:
    trial: int
    seed: list
    u_max: float = math.nan
    disturbance_std: float = math.nan
    plant_text: str = ""
    setpoints: list = field(default_factory=list)
    disturbances: np.ndarray = None
    states: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)
    normalized: dict = field(default_factory=dict)
    sat_stable: bool = True
    online_solves: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.errors

    def to_json(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "trial": self.trial, "seed": self.seed, "u_max": self.u_max,
            "disturbance_std": self.disturbance_std, "plant": self.plant_text,
            "setpoints": [[arr(s.x_star), arr(s.u_star)] for s in self.setpoints],
            "disturbances": arr(self.disturbances),
            "states": {k: arr(v) for k, v in self.states.items()},
            "inputs": {k: arr(v) for k, v in self.inputs.items()},
            "costs": self.costs, "normalized": self.normalized, "sat_stable": self.sat_stable,
            "online_solves": self.online_solves, "wall_times": self.wall_times,
            "errors": self.errors, "calibration": self.calibration,
        }

    @classmethod
    def from_json(cls, data):
        res = cls(data["trial"], data["seed"], data["u_max"], data["disturbance_std"],
                  data["plant"])
        res.setpoints = [Setpoint(np.array(x), np.array(u)) for x, u in data["setpoints"]]
        res.disturbances = np.array(data["disturbances"])
        res.states = {k: np.array(v) for k, v in data["states"].items()}
        res.inputs = {k: np.array(v) for k, v in data["inputs"].items()}
        for name in ("costs", "normalized", "sat_stable", "online_solves", "wall_times",
                     "errors", "calibration"):
            setattr(res, name, data[name])
        return res


@dataclass
class CostReport:
    mean_normalized: dict
    stable_mean: dict
    trials: int
    stable_count: int
    failed: list

    def rows(self):
        return [(name, self.mean_normalized.get(name, math.nan),
                 self.stable_mean.get(name, math.nan)) for name in CONTROLLERS]


# -- one trial ---------------------------------------------------------------------------

def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _stage_costs(xs, us, refs, Q, R):
    out = np.empty(len(us))
    with np.errstate(over="ignore", invalid="ignore"):
        for t, (x, u) in enumerate(zip(xs, us)):
            dx = x - refs[t].x_star
            du = u - refs[t].u_star
            out[t] = dx @ Q @ dx + du @ R @ du
    # diverging runs keep accumulating without overflowing
    return np.where(np.isfinite(out), np.minimum(out, 1e300), 1e300)


def _simulate(plant, x0, w, schedule, policy, clamp=None):
    xs, us = [x0], []
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(w.shape[0]):
            u = policy(t, x, schedule[t])
            if clamp is not None:
                u = saturate(u, clamp)
            x = step_dynamics(plant, x, u, w[t])
            # keep diverging runs finite
            x = np.clip(np.nan_to_num(x, nan=0.0, posinf=1e150, neginf=-1e150), -1e150, 1e150)
            xs.append(x)
            us.append(u)
    return np.array(xs), np.array(us)


def _calibrate(plant, gain, s0, s1, config):
    """Dry run of the unconstrained tracking law from ``s0`` toward ``s1``."""
    x = s0.x_star.copy()
    peak, dev = 0.0, []
    for _ in range(config.t_mpc):
        u = linear_tracking_step(gain, x, s1.x_star, s1.u_star)
        peak = max(peak, float(np.max(np.abs(u))))
        dev.append(u - s1.u_star)
        x = step_dynamics(plant, x, u, np.zeros(plant.p))
    rms = float(np.sqrt(np.mean(np.square(dev))))
    return peak, rms


def run_trial(config, seed, trial=0):
    """Simulate every controller on one random grid and setpoint schedule."""
    ss = _seed_sequence(seed)
    plant_ss, load_ss, noise_ss = ss.spawn(3)
    result = TrialResult(trial, [int(v) for v in np.atleast_1d(ss.entropy)] + list(ss.spawn_key))
    plant = generate_plant(config.rows, config.cols, plant_ss, dt=config.dt,
                           extra_edge_prob=config.extra_edge_prob)
    N, n = plant.p, plant.n
    Q = weight_matrix(config.q_weight, N, STATE_DIM)
    R = weight_matrix(config.r_weight, N, 1)

    # setpoint 0 is the initial equilibrium; 1..num_periods switch every t_mpc steps
    setpoints = []
    for load_seed in load_ss.spawn(config.num_periods + 1):
        loads = sample_load_profile(plant.topology, load_seed, config.setpoint_magnitude)
        setpoints.append(solve_dc_opf(plant.topology, plant.susceptance, loads, plant))
    steps = config.sim_length
    schedule = [setpoints[1 + t // config.t_mpc] for t in range(steps)]

    gain = stationary_lqr(plant, Q, R)
    peak, rms = _calibrate(plant, gain, setpoints[0], setpoints[1], config)
    u_max = config.u_max if config.u_max > 0 else config.u_max_factor * peak
    # every setpoint must be holdable with some headroom
    u_hold = max(float(np.max(np.abs(s.u_star))) for s in setpoints[1:])
    result.calibration = {"dry_run_peak": peak, "dry_run_rms": rms, "max_u_star": u_hold,
                          "raised_for_holding": bool(u_max < 1.1 * u_hold)}
    u_max = max(u_max, 1.1 * u_hold)
    if u_max <= 0:
        # nothing moves (zero setpoints): any positive bound is equivalent
        u_max = 1.0
    std = config.disturbance_std if config.disturbance_std >= 0 else config.disturbance_rel * rms
    plant = plant.with_u_max(u_max)
    w = np.random.default_rng(noise_ss).normal(0.0, std, size=(steps, N)) if std > 0 \
        else np.zeros((steps, N))

    result.u_max, result.disturbance_std = u_max, std
    result.plant_text = dump_plant(plant)
    result.setpoints = setpoints
    result.disturbances = w
    x0 = setpoints[0].x_star.copy()

    def linear(t, x, sp):
        return linear_tracking_step(gain, x, sp.x_star, sp.u_star)

    def cen_mpc():
        base = MpcProblem(plant, config.horizon, Q, R, u_max, schedule[0].x_star,
                          schedule[0].u_star)
        state = {"plan": None, "sp": None, "problem": base}

        def policy(t, x, sp):
            if sp is not state["sp"]:
                state["problem"] = state["problem"].with_setpoint(sp.x_star, sp.u_star)
                state["sp"] = sp
            plan = mpc_solve_centralized(state["problem"], x, warm_start=state["plan"])
            state["plan"] = plan
            return plan.inputs[0]
        return policy, lambda: steps

    def loc_layered():
        ctrl = build_layered_controller(plant, schedule[0], Q, R, horizon=config.horizon,
                                        t_mpc=config.t_mpc, d=config.d, u_max=u_max,
                                        admm=config.admm)

        def policy(t, x, sp):
            new = sp if t % config.t_mpc == 0 else None
            return layered_step(ctrl, x, new)
        policy.controller = ctrl
        return policy, lambda: count_online_solves(ctrl, steps)

    factories = {
        "UnsatCenLin": lambda: (linear, lambda: 0),
        "SatCenLin": lambda: (linear, lambda: 0),
        "CenMPC": cen_mpc,
        "LocLayered": loc_layered,
    }
    clamps = {"UnsatCenLin": None, "SatCenLin": u_max, "CenMPC": u_max, "LocLayered": u_max}
    for name in CONTROLLERS:
        t0 = time.perf_counter()
        try:
            policy, solves = factories[name]()
            xs, us = _simulate(plant, x0, w, schedule, policy, clamps[name])
            result.states[name], result.inputs[name] = xs, us
            result.costs[name] = float(np.sum(_stage_costs(xs[:-1], us, schedule, Q, R)))
            result.online_solves[name] = solves()
            failures = getattr(getattr(policy, "controller", None), "failures", [])
            if failures:
                result.errors[name] = f"{len(failures)} top-layer solve(s) fell back: " \
                                      f"{failures[0][1]}"
        except (SlsError, ValueError, np.linalg.LinAlgError) as exc:
            result.errors[name] = f"{type(exc).__name__}: {exc}"
            result.costs[name] = math.nan
        result.wall_times[name] = time.perf_counter() - t0

    sat_x = result.states.get("SatCenLin")
    result.sat_stable = bool(sat_x is not None and np.all(np.abs(sat_x) <= config.divergence_threshold))
    ref = result.costs.get("UnsatCenLin", math.nan)
    for name, c in result.costs.items():
        result.normalized[name] = 1.0 if ref == 0 else c / ref
    return result


# -- many trials -------------------------------------------------------------------------

def _run_one(args):
    config, seed, trial = args
    return run_trial(config, seed, trial)


def trial_seeds(config, trials):
    return np.random.SeedSequence(config.seed).spawn(trials)


def run_trials(config, trials=None):
    trials = config.trials if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = [(config, s, i) for i, s in enumerate(trial_seeds(config, trials))]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def summarize(results):
    good = [r for r in results if r.ok]
    stable = [r for r in good if r.sat_stable]
    mean = {name: float(np.mean([r.normalized[name] for r in good])) if good else math.nan
            for name in CONTROLLERS}
    smean = {name: float(np.mean([r.normalized[name] for r in stable])) if stable else math.nan
             for name in CONTROLLERS}
    failed = [(r.trial, r.errors) for r in results if not r.ok]
    return CostReport(mean, smean, len(good), len(stable), failed)


def run_benchmark(config, trials=None):
    """Run trials and aggregate; returns ``(report, results)``."""
    results = run_trials(config, trials)
    return summarize(results), results


# -- reports -------------------------------------------------------------------------------

def output_dir(default="slsgrid_out"):
    return Path(os.environ.get(OUT_ENV) or default)


def emit_report(report, results, out_dir, probe_node=-1, plots=True):
    """Write ``costs.csv``, ``summary.csv``, per-trial trajectories, dumps and plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out / "costs.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["trial"] + [f"{c}_normalized" for c in CONTROLLERS]
                    + [f"{c}_raw" for c in CONTROLLERS] + ["satcenlin_stable", "error"])
        for r in results:
            wr.writerow([r.trial] + [repr(r.normalized.get(c, math.nan)) for c in CONTROLLERS]
                        + [repr(r.costs.get(c, math.nan)) for c in CONTROLLERS]
                        + [int(r.sat_stable), "; ".join(f"{k}: {v}" for k, v in r.errors.items())])
    written.append(out / "costs.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["controller", "total", "satcenlin_stable"])
        if report is not None and report.trials:
            for name, total, stable in report.rows():
                wr.writerow([name, repr(total), repr(stable)])
            wr.writerow(["trials", report.trials, report.stable_count])
    written.append(out / "summary.csv")
    for r in results:
        written.extend(_emit_trial(r, out, probe_node, plots))
    return written


def _emit_trial(r, out, probe_node, plots):
    files = []
    N = r.disturbances.shape[1]
    node = probe_node if 0 <= probe_node < N else N // 2
    path = out / f"traj_{r.trial}.csv"
    xs, us = r.states.get("LocLayered"), r.inputs.get("LocLayered")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "node", "theta", "omega", "u", "w"])
        if xs is not None:
            for t in range(us.shape[0]):
                wr.writerow([t, node, repr(float(xs[t, 2 * node])), repr(float(xs[t, 2 * node + 1])),
                             repr(float(us[t, node])), repr(float(r.disturbances[t, node]))])
    files.append(path)
    dump = out / f"trial_{r.trial}.json"
    dump.write_text(json.dumps(r.to_json()))
    files.append(dump)
    if plots and r.states:
        files.append(plot_trial(r, out / f"traj_{r.trial}.svg", node))
    return files


def plot_trial(result, path, node):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    steps = result.disturbances.shape[0]
    ref = np.array([result.setpoints[1 + min(t * len(result.setpoints[1:]) // steps,
                                              len(result.setpoints) - 2)].x_star[2 * node]
                    for t in range(steps)])
    for name in CONTROLLERS:
        if name not in result.states:
            continue
        xs, us = result.states[name], result.inputs[name]
        with np.errstate(all="ignore"):
            theta = np.clip(xs[:steps, 2 * node], -1e3, 1e3)
            omega = np.clip(xs[:steps, 2 * node + 1], -1e3, 1e3)
        axes[0].plot(theta, label=name)
        axes[1].plot(omega, label=name)
        axes[2].plot(us[:, node], label=name)
    axes[0].plot(ref, "k--", lw=0.8, label="setpoint")
    axes[2].axhline(result.u_max, color="k", lw=0.5)
    axes[2].axhline(-result.u_max, color="k", lw=0.5)
    axes[0].set_ylabel("phase")
    axes[1].set_ylabel("frequency")
    axes[2].set_ylabel("actuation")
    axes[2].set_xlabel("step")
    axes[0].legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def load_results(dump_dir):
    paths = sorted(Path(dump_dir).glob("trial_*.json"),
                   key=lambda p: int(p.stem.split("_")[1]))
    return [TrialResult.from_json(json.loads(p.read_text())) for p in paths]


def plant_of(result):
    return load_plant(result.plant_text)
