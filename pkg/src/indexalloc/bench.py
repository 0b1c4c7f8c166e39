"""Seeded benchmark harness for the index heuristic.

Generates random two-project problems (service stations or assets),
solves each exactly on the joint state space, evaluates the greedy
index policy together with static and myopic baselines, and reports
order statistics of the percentage excess over optimum.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mdp
from .core import IndexTable, ProjectSpec, SystemSpec, greedy_action
from .plates import AssetModel, asset_breakpoints, asset_indices, myopic_action
from .station import StationModel, check_assumption1, compute_breakpoints, station_indices

__all__ = [
    "GeneratorConfig",
    "SuboptimalityReport",
    "PRESETS",
    "preset",
    "generate_example1",
    "generate_example2",
    "generate_plates",
    "generate_instances",
    "run_experiment",
    "write_report_csv",
    "write_report_json",
]

SCHEMA_VERSION = 1
QUEUE_FAMILIES = ("example1", "example2")
PLATE_FAMILIES = ("plates-flat", "plates-powerlaw", "plates-rescaled")
STAT_NAMES = ("MIN", "LQ", "MED", "UQ", "MAX")


@dataclass(frozen=True)
class GeneratorConfig:
    """Family, parameter ranges and budget of one random problem set.

    ``ranges`` maps parameter names to half-open uniform ranges
    ``[low, high)``: lam1/lam2, mu1/mu2, nu1/nu2 (example1),
    eta1/eta2 (example2), phi and eta (plates-flat), phi and alpha
    (other plates families).  ``return_shape`` selects ``d``:
    "ratio" is ``n/(n+1)``, "step" the piecewise 0 / (n-4)/5 / 1
    ramp.  ``xi_scale_to`` rescales the state-improvement profile so
    its value at state 0 is fixed.
    """

    family: str
    count: int
    seed: int
    ranges: dict[str, tuple[float, float]]
    n_projects: int = 2
    pool: int = 25
    resource: int = 5
    top_state: int = 10
    holding_costs: tuple[float, ...] = (1.0, 1.0)
    return_shape: str = "ratio"
    decay_slope: float = 1.0
    xi_scale_to: float | None = None
    resample_budget: int = 1000

    def __post_init__(self):
        if self.family not in QUEUE_FAMILIES + PLATE_FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.count < 1:
            raise ValueError("count must be positive")
        for name, (lo, hi) in self.ranges.items():
            if not lo < hi:
                raise ValueError(f"range {name}: [{lo}, {hi}) is empty")
        if self.family == "example1":
            for name in ("nu1", "nu2"):
                if self.ranges[name][0] < 0.05:
                    raise ValueError(f"{name} range must stay >= 0.05")
        if self.family == "example2":
            for name in ("eta1", "eta2"):
                if self.ranges[name][0] < 0.01:
                    raise ValueError(f"{name} range must stay >= 0.01")

    def to_json(self) -> str:
        data = asdict(self)
        data["schema_version"] = SCHEMA_VERSION
        return json.dumps(data, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        data = json.loads(text)
        data.pop("schema_version", None)
        data["ranges"] = {k: tuple(v) for k, v in data["ranges"].items()}
        data["holding_costs"] = tuple(data.get("holding_costs", (1.0, 1.0)))
        return cls(**data)


_EX1_BASE = {
    "lam1": (0.8, 1.1), "lam2": (1.6, 2.2),
    "mu1": (1.5, 1.8), "nu1": (5.0, 10.0), "nu2": (0.5, 2.0),
}
_EX2_BASE = {
    "lam1": (0.8, 1.1), "lam2": (1.6, 2.2),
    "mu1": (1.5, 1.8), "eta1": (0.07, 0.125), "eta2": (0.2, 0.3),
}

# "g7"/"j7"/"g14"/"j14" carry published parameter ranges; the broad
# presets span the union of both service-rate ranges and are our own.
PRESETS: dict[str, dict] = {
    "g7": dict(family="example1",
               ranges={**_EX1_BASE, "mu2": (3.0, 3.6)}),
    "j7": dict(family="example1",
               ranges={**_EX1_BASE, "mu2": (4.4, 5.0)}),
    "g14": dict(family="example2",
                ranges={**_EX2_BASE, "mu2": (3.0, 3.6)}),
    "j14": dict(family="example2",
                ranges={**_EX2_BASE, "mu2": (4.4, 5.0)}),
    "broad7": dict(family="example1",
                   ranges={**_EX1_BASE, "mu2": (3.0, 5.0)}),
    "broad14": dict(family="example2",
                    ranges={**_EX2_BASE, "mu2": (3.0, 5.0)}),
    "plates-flat": dict(family="plates-flat", resource=5,
                        ranges={"phi": (0.75, 5.0), "eta": (0.75, 1.25)},
                        return_shape="ratio"),
    "plates-powerlaw-r10": dict(family="plates-powerlaw", resource=10,
                                ranges={"phi": (0.75, 5.0),
                                        "alpha": (1.05, 1.50)},
                                return_shape="step", decay_slope=1.0),
    "plates-powerlaw-r5": dict(family="plates-powerlaw", resource=5,
                               ranges={"phi": (0.75, 5.0),
                                       "alpha": (1.05, 1.50)},
                               return_shape="step", decay_slope=0.5),
    "plates-rescaled-a": dict(family="plates-rescaled", resource=10,
                              ranges={"phi": (0.75, 5.0),
                                      "alpha": (1.05, 1.20)},
                              return_shape="step", decay_slope=1.0,
                              xi_scale_to=12.0),
    "plates-rescaled-b": dict(family="plates-rescaled", resource=10,
                              ranges={"phi": (0.75, 5.0),
                                      "alpha": (1.20, 1.35)},
                              return_shape="step", decay_slope=1.0,
                              xi_scale_to=12.0),
    "plates-rescaled-c": dict(family="plates-rescaled", resource=10,
                              ranges={"phi": (0.75, 5.0),
                                      "alpha": (1.35, 1.50)},
                              return_shape="step", decay_slope=1.0,
                              xi_scale_to=12.0),
    "plates-rescaled-d": dict(family="plates-rescaled", resource=10,
                              ranges={"phi": (0.75, 5.0),
                                      "alpha": (1.50, 1.65)},
                              return_shape="step", decay_slope=1.0,
                              xi_scale_to=12.0),
}


def preset(name: str, count: int, seed: int, **overrides) -> GeneratorConfig:
    """Instantiate a named preset with a problem count and seed."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return GeneratorConfig(count=count, seed=seed, **{**PRESETS[name], **overrides})


def _rng(config: GeneratorConfig, index: int) -> np.random.Generator:
    """Per-instance substream: PCG64 seeded by (seed, instance index).

    Instances are independent of each other and of how many are
    drawn, so parallel runs see identical streams.
    """
    return np.random.default_rng([config.seed, index])


def _uniform(rng, rangespec) -> float:
    lo, hi = rangespec
    return float(lo + (hi - lo) * rng.random())


def _return_function(config: GeneratorConfig):
    if config.return_shape == "ratio":
        return lambda n: n / (n + 1)
    if config.return_shape == "step":
        return lambda n: 0.0 if n <= 4 else ((n - 4) / 5 if n <= 8 else 1.0)
    raise ValueError(f"unknown return shape {config.return_shape!r}")


def _station_pair(config: GeneratorConfig, rng) -> tuple[list[StationModel], dict]:
    S = config.pool
    a = np.arange(S + 1, dtype=float)
    for _ in range(config.resample_budget):
        params = {}
        stations = []
        for k in range(1, config.n_projects + 1):
            lam = _uniform(rng, config.ranges[f"lam{k}"])
            mubar = _uniform(rng, config.ranges[f"mu{k}"])
            if config.family == "example1":
                shape = _uniform(rng, config.ranges[f"nu{k}"])
                mu = a / (a + shape) * mubar
            else:
                shape = _uniform(rng, config.ranges[f"eta{k}"])
                mu = (1.0 - np.exp(-a * shape)) * mubar
            params.update({f"lam{k}": lam, f"mu{k}": mubar, f"shape{k}": shape})
            stations.append(StationModel(arrival_rate=lam, mu=mu,
                                         holding_cost=config.holding_costs[k - 1]))
        if check_assumption1(stations, S).passed:
            return stations, params
    raise RuntimeError("resample budget exhausted for a station pair")


def _asset_pair(config: GeneratorConfig, rng) -> tuple[list[AssetModel], dict]:
    R = config.resource
    A = config.top_state
    d = _return_function(config)
    for _ in range(config.resample_budget):
        params = {}
        assets = []
        for k in range(1, config.n_projects + 1):
            phi = _uniform(rng, config.ranges["phi"])
            if config.family == "plates-flat":
                eta = _uniform(rng, config.ranges["eta"])
                xi_fn = lambda n: 1.0
                eta_fn = lambda n, e=eta: e
                params.update({f"phi{k}": phi, f"eta{k}": eta})
            else:
                alpha = _uniform(rng, config.ranges["alpha"])
                scale = 1.0
                if config.xi_scale_to is not None:
                    scale = config.xi_scale_to / (11.0 ** alpha - 1.0)
                xi_fn = (lambda n, al=alpha, sc=scale:
                         sc * (11.0 ** al - (n + 1) ** al) * (n + 1) ** (1.0 - al))
                eta_fn = lambda n, sl=config.decay_slope: sl * n
                params.update({f"phi{k}": phi, f"alpha{k}": alpha})
            asset = AssetModel.separable(phi, xi_fn, eta_fn, d,
                                         max_level=R, top_state=A)
            assets.append(asset)
        if all(m.validate().passed for m in assets):
            return assets, params
    raise RuntimeError("resample budget exhausted for an asset pair")


def generate_instances(config: GeneratorConfig) -> list[tuple[list, dict]]:
    """All ``count`` instances, each a (models, parameter dict) pair."""
    out = []
    maker = _station_pair if config.family in QUEUE_FAMILIES else _asset_pair
    for i in range(config.count):
        out.append(maker(config, _rng(config, i)))
    return out


def generate_example1(config: GeneratorConfig) -> list[list[StationModel]]:
    if config.family != "example1":
        raise ValueError("config family must be example1")
    return [models for models, _ in generate_instances(config)]


def generate_example2(config: GeneratorConfig) -> list[list[StationModel]]:
    if config.family != "example2":
        raise ValueError("config family must be example2")
    return [models for models, _ in generate_instances(config)]


def generate_plates(config: GeneratorConfig) -> list[list[AssetModel]]:
    if config.family not in PLATE_FAMILIES:
        raise ValueError("config family must be a plates family")
    return [models for models, _ in generate_instances(config)]


@dataclass
class SuboptimalityReport:
    """Order statistics of percentage excess over optimum per policy."""

    config: GeneratorConfig
    policies: tuple[str, ...]
    stats: dict[str, dict[str, float]]  # policy -> MIN/LQ/MED/UQ/MAX
    n: int
    rows: list[dict]
    failures: list[tuple[int, str]] = field(default_factory=list)

    def recompute_stats(self) -> dict[str, dict[str, float]]:
        out = {}
        for pol in self.policies:
            if pol == "optimal":
                continue
            vals = [row[f"pct_{pol}"] for row in self.rows]
            out[pol] = _order_stats(vals)
        return out


def _order_stats(values) -> dict[str, float]:
    qs = np.percentile(np.asarray(values, dtype=float), [0, 25, 50, 75, 100],
                       method="linear")
    return dict(zip(STAT_NAMES, (float(q) for q in qs)))


def _default_caps(stations, budget) -> list[int]:
    """Per-station truncation caps sized to the policies compared.

    The tail-mass rule is applied at each station's level under the
    best static allocation, not under full service: the static
    baseline (and near-critical stations under any sensible policy)
    can carry far heavier queue tails than the full-service load
    suggests, and a cap the dynamic optimum can cheaply park a queue
    against makes the truncated "optimum" spuriously cheap.  Falls
    back to full-service loads when no stable static split exists.
    """
    alloc, _ = mdp.best_static(stations, budget)
    if alloc is None:
        return [mdp.default_cap(st) for st in stations]
    return [mdp.default_cap(st, level=a) for st, a in zip(stations, alloc)]


def _station_tables(stations, caps) -> list[IndexTable]:
    """Index tables to the full truncation depth.

    Heavily loaded stations spend real stationary mass near the cap,
    so shallower tables with a last-column fallback would freeze index
    comparisons exactly where the system lives.
    """
    tables = []
    for st, cap in zip(stations, caps):
        seq = compute_breakpoints(st, depth=cap)
        tables.append(station_indices(st, cap, seq))
    return tables


def _greedy_joint_policy(joint: mdp.TruncatedJointMdp, tables, system) -> np.ndarray:
    """Greedy index action in every joint state, as action indices."""
    action_ix = {tuple(a): i for i, a in enumerate(joint.actions.tolist())}
    policy = np.empty(joint.n_states, dtype=int)
    for flat in range(joint.n_states):
        state = np.unravel_index(flat, joint.shape)
        act = greedy_action(tables, [int(x) for x in state], system)
        policy[flat] = action_ix[act]
    return policy


def _myopic_joint_policy(joint, assets, resource) -> np.ndarray:
    action_ix = {tuple(a): i for i, a in enumerate(joint.actions.tolist())}
    policy = np.empty(joint.n_states, dtype=int)
    for flat in range(joint.n_states):
        state = np.unravel_index(flat, joint.shape)
        act = myopic_action(assets, [int(x) for x in state], resource)
        policy[flat] = action_ix[act]
    return policy


def _run_instance(config: GeneratorConfig, index: int,
                  policies: tuple[str, ...], caps=None) -> dict:
    queueing = config.family in QUEUE_FAMILIES
    maker = _station_pair if queueing else _asset_pair
    models, params = maker(config, _rng(config, index))
    row: dict = {"instance_id": index, "seed": config.seed}
    row.update(params)
    if queueing:
        if "myopic" in policies:
            raise ValueError("myopic policy is defined for asset problems only")
        if caps is None:
            caps = _default_caps(models, config.pool)
        budget = config.pool
        joint = mdp.build_joint(models, budget, caps=caps)
        row["caps"] = "x".join(str(c) for c in caps)
        sense = "min"
    else:
        budget = config.resource
        joint = mdp.build_joint(models, budget)
        row["caps"] = "exact"
        sense = "max"

    index_pol = None
    if queueing:
        # the greedy index policy doubles as a warm start for policy
        # iteration; on deep truncations it is near-optimal already
        tables = _station_tables(models, caps)
        projects = [ProjectSpec(state_count=c + 1, max_level=config.pool)
                    for c in caps]
        system = SystemSpec(projects=tuple(projects), resource_rate=budget)
        index_pol = _greedy_joint_policy(joint, tables, system)

    opt = mdp.policy_iteration(joint, initial_policy=index_pol)
    row["gamma_opt"] = opt.gain
    row["solver_sweeps"] = opt.sweeps

    if "index" in policies:
        if queueing:
            pol = index_pol
        else:
            tables = [asset_indices(m) for m in models]
            projects = [ProjectSpec(state_count=m.top_state + 1,
                                    max_level=m.max_level,
                                    objective_sense="maximize-reward")
                        for m in models]
            system = SystemSpec(projects=tuple(projects), resource_rate=budget)
            pol = _greedy_joint_policy(joint, tables, system)
        row["gamma_index"] = mdp.evaluate_policy(joint, pol)
        row["pct_index"] = mdp.percentage_excess(row["gamma_index"],
                                                 row["gamma_opt"], sense)
    if "static" in policies:
        alloc, _closed_form = mdp.best_static(models, budget)
        static_ix = {tuple(a): i for i, a in enumerate(joint.actions.tolist())}[alloc]
        pol = np.full(joint.n_states, static_ix, dtype=int)
        row["gamma_static"] = mdp.evaluate_policy(joint, pol)
        row["pct_static"] = mdp.percentage_excess(row["gamma_static"],
                                                  row["gamma_opt"], sense)
        row["static_alloc"] = "+".join(str(a) for a in alloc)
    if "myopic" in policies:
        pol = _myopic_joint_policy(joint, models, budget)
        row["gamma_myopic"] = mdp.evaluate_policy(joint, pol)
        row["pct_myopic"] = mdp.percentage_excess(row["gamma_myopic"],
                                                  row["gamma_opt"], sense)
    return row


def evaluate_system(models, resource, policy: str, caps=None) -> float:
    """Gain of one policy on an explicit system of stations or assets.

    ``policy`` is one of optimal, index, static, myopic.  Station
    systems are truncated at ``caps`` (default: per-station tail-mass
    rule at the best static allocation); asset systems are exact.
    """
    models = list(models)
    queueing = isinstance(models[0], StationModel)
    if queueing:
        if caps is None:
            caps = _default_caps(models, int(resource))
        joint = mdp.build_joint(models, int(resource), caps=caps)
    else:
        joint = mdp.build_joint(models, int(resource))
    if policy == "optimal":
        return mdp.policy_iteration(joint).gain
    if policy == "index":
        if queueing:
            tables = _station_tables(models, caps)
            projects = [ProjectSpec(state_count=c + 1, max_level=m.pool_size)
                        for m, c in zip(models, caps)]
        else:
            tables = [asset_indices(m) for m in models]
            projects = [ProjectSpec(state_count=m.top_state + 1,
                                    max_level=m.max_level,
                                    objective_sense="maximize-reward")
                        for m in models]
        system = SystemSpec(projects=tuple(projects), resource_rate=resource)
        return mdp.evaluate_policy(joint, _greedy_joint_policy(joint, tables, system))
    if policy == "static":
        alloc, _ = mdp.best_static(models, int(resource))
        ix = {tuple(a): i for i, a in enumerate(joint.actions.tolist())}[alloc]
        return mdp.evaluate_policy(joint, np.full(joint.n_states, ix, dtype=int))
    if policy == "myopic":
        if queueing:
            raise ValueError("myopic policy is defined for asset problems only")
        return mdp.evaluate_policy(
            joint, _myopic_joint_policy(joint, models, int(resource)))
    raise ValueError(f"unknown policy {policy!r}")


def run_experiment(config: GeneratorConfig,
                   policies=("index", "static", "optimal"),
                   caps=None, jobs: int = 1) -> SuboptimalityReport:
    """Solve every instance and summarize percentage excess over optimum.

    The optimum is always computed (it is the denominator).
    Per-instance failures are recorded with their message and excluded
    from the statistics.  Results are merged in instance order, so the
    report is identical for any ``jobs``.
    """
    policies = tuple(policies)
    if "optimal" not in policies:
        policies = policies + ("optimal",)
    rows, failures = [], []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_instance, config, i, policies, caps)
                       for i in range(config.count)]
            for i, fut in enumerate(futures):
                try:
                    rows.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - recorded, not dropped
                    failures.append((i, str(exc)))
    else:
        for i in range(config.count):
            try:
                rows.append(_run_instance(config, i, policies, caps))
            except Exception as exc:  # noqa: BLE001
                failures.append((i, str(exc)))
    stats = {}
    for pol in policies:
        if pol == "optimal":
            continue
        vals = [row[f"pct_{pol}"] for row in rows]
        if vals:
            stats[pol] = _order_stats(vals)
    return SuboptimalityReport(config=config, policies=policies, stats=stats,
                               n=len(rows), rows=rows, failures=failures)


def write_report_csv(report: SuboptimalityReport, path) -> None:
    """Per-instance rows followed by a commented summary block."""
    fields = sorted({k for row in report.rows for k in row},
                    key=lambda k: (k not in ("instance_id", "seed"), k))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row)
        fh.write(f"# schema_version={SCHEMA_VERSION} n={report.n} "
                 f"failures={len(report.failures)}\n")
        for pol, st in report.stats.items():
            line = " ".join(f"{name}={st[name]:.4f}" for name in STAT_NAMES)
            fh.write(f"# {pol}: {line}\n")


def write_report_json(report: SuboptimalityReport, path) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": json.loads(report.config.to_json()),
        "policies": list(report.policies),
        "stats": report.stats,
        "n": report.n,
        "rows": report.rows,
        "failures": report.failures,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
