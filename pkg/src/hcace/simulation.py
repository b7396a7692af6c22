"""Monte Carlo engine for the discovery-and-testing pipeline.

Data are generated directly as matched pairs whose two units share their
covariates. Each replication draws from its own ``SeedSequence`` child
keyed by the replication number, so results do not depend on the order in
which replications run or on how they are spread over processes.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .closed_testing import REJECTED, SKIPPED, run_closed_test
from .core import MatchedPair, PairData, PotentialUnit, Unit
from .inference import pair_statistics
from .tree import TreeConfig, fit_tree, grouping_from_tree

CELLS = ("00", "01", "10", "11")

COMPLIANCE_SETTINGS = {
    "same": (0.0, 0.0, 0.0, 0.0),
    "similar": (-0.1, -0.1, 0.1, 0.1),
    "different-1": (-0.5, -0.5, 0.5, 0.5),
    "different-2": (-0.3, -0.5, 0.1, 0.7),
}

OHIE_COVARIATES = ("female", "age", "english", "msa", "education", "asian", "black", "hispanic")
# marginals for synthetic OHIE-shaped covariates; age is uniform on 19..64
OHIE_MARGINALS = {"female": 0.56, "english": 0.9, "msa": 0.75, "education": 0.3,
                  "asian": 0.05, "black": 0.05, "hispanic": 0.1}
OHIE_MAGNITUDES = {"small": 0.5, "moderate": 1.0, "large": 2.0}
OHIE_MODIFIERS = frozenset({"age", "education", "english", "asian", "female"})


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    n_pairs: int = 2000
    n_covariates: int = 6
    effects: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)
    compliance: float = 0.5
    compliance_constants: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    one_sided: bool = True
    always_taker_rate: float = 0.0
    seed: int = 0
    template: str = "binary"
    ohie_magnitude: str = "moderate"

    def __post_init__(self):
        if self.template not in ("binary", "ohie"):
            raise ValueError(f"unknown template {self.template!r}")
        if self.template == "binary" and self.n_covariates < 2:
            raise ValueError("the binary template needs at least 2 covariates")
        if not 0.0 <= self.compliance <= 1.0:
            raise ValueError(f"compliance rate must lie in [0, 1], got {self.compliance}")
        if not 0.0 <= self.always_taker_rate <= 1.0:
            raise ValueError("always_taker_rate must lie in [0, 1]")
        if self.n_pairs < 2:
            raise ValueError("n_pairs must be at least 2")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def cell_compliance(self) -> np.ndarray:
        """Compliance rate of each (x1, x2) cell, clamped to [0, 1]."""
        pi = self.compliance
        c = np.asarray(self.compliance_constants, dtype=float)
        rates = pi + c * pi if pi <= 0.5 else pi + c * (1.0 - pi)
        return np.clip(rates, 0.0, 1.0)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        if self.template == "ohie":
            return OHIE_COVARIATES
        return tuple(f"x{j + 1}" for j in range(self.n_covariates))

    def true_modifiers(self) -> frozenset[str]:
        if self.template == "ohie":
            return OHIE_MODIFIERS
        e00, e01, e10, e11 = self.effects
        out = set()
        if e00 != e10 or e01 != e11:
            out.add("x1")
        if e00 != e01 or e10 != e11:
            out.add("x2")
        return frozenset(out)


def builtin_scenarios() -> dict[str, ScenarioConfig]:
    def binary(name, effects, **kw):
        return ScenarioConfig(name=name, effects=effects, **kw)

    out = {
        "no": binary("no", (0.5, 0.5, 0.5, 0.5)),
        "slight": binary("slight", (0.7, 0.7, 0.3, 0.3)),
        "strong": binary("strong", (0.9, 0.9, 0.1, 0.1)),
        "complex": binary("complex", (1.5, 0.0, 0.0, 0.5)),
        "opposite": binary("opposite", (0.3, -0.3, 0.7, -0.7)),
        "honesty": binary("honesty", (2.0, 0.0, 0.0, 0.0)),
        "null": binary("null", (0.0, 0.0, 0.0, 0.0)),
    }
    for mag in OHIE_MAGNITUDES:
        out[f"ohie-{mag}"] = ScenarioConfig(name=f"ohie-{mag}", n_pairs=11808, template="ohie",
                                            ohie_magnitude=mag, compliance=0.29)
    return out


def compliance_settings() -> dict[str, tuple[float, float, float, float]]:
    return dict(COMPLIANCE_SETTINGS)


def scenario(name: str, compliance_setting: str = "same", **overrides) -> ScenarioConfig:
    base = builtin_scenarios()[name]
    consts = COMPLIANCE_SETTINGS[compliance_setting]
    label = name if compliance_setting == "same" else f"{name}/{compliance_setting}"
    return base.replace(name=label, compliance_constants=consts, **overrides)


def ohie_compliance(x: np.ndarray) -> np.ndarray:
    col = {n: x[:, k] for k, n in enumerate(OHIE_COVARIATES)}
    eng, asian, age = col["english"], col["asian"], col["age"]
    return 0.32 - 0.15 * (1 - eng) + 0.15 * eng * asian - 0.05 * (age < 36)


def ohie_effect(x: np.ndarray, magnitude: str = "moderate") -> np.ndarray:
    k = OHIE_MAGNITUDES[magnitude]
    col = {n: x[:, j] for j, n in enumerate(OHIE_COVARIATES)}
    male = 1 - col["female"]
    return k * (0.5 + 8.0 / col["age"] + 0.2 * (1 - col["education"])
                - 0.5 * (1 - col["english"]) + 0.7 * col["asian"]
                + 0.4 * male * (col["age"] >= 36))


@dataclass(eq=False)
class SimData:
    """Simulated pairs plus the potential outcomes that produced them.

    Arrays with a trailing axis of 2 are indexed by unit within pair;
    ``treated_unit[i]`` is the unit that received instrument 1.
    """

    config: ScenarioConfig
    x: np.ndarray
    cell: np.ndarray
    effect: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    treated_unit: np.ndarray
    pairs: PairData = field(init=False)

    def __post_init__(self):
        self.pairs = self.realize(self.treated_unit)

    def realize(self, treated_unit) -> PairData:
        i = np.arange(self.x.shape[0])
        t = np.asarray(treated_unit, dtype=np.intp)
        c = 1 - t
        return PairData(self.r1[i, t], self.d1[i, t], self.r0[i, c], self.d0[i, c],
                        self.x, self.config.covariate_names)

    def potential_units(self) -> list[tuple[PotentialUnit, PotentialUnit]]:
        out = []
        for i in range(self.x.shape[0]):
            xi = tuple(float(v) for v in self.x[i])
            out.append(tuple(PotentialUnit(int(self.d0[i, j]), int(self.d1[i, j]),
                                           float(self.r0[i, j]), float(self.r1[i, j]), xi)
                             for j in range(2)))
        return out

    def matched_pairs(self) -> list[MatchedPair]:
        out = []
        for i, (u0, u1) in enumerate(self.potential_units()):
            t = int(self.treated_unit[i])
            units = (u0, u1)
            treated: Unit = units[t].realize(1, f"{i}.{t}")
            control: Unit = units[1 - t].realize(0, f"{i}.{1 - t}")
            out.append(MatchedPair(i, treated, control, treated.x))
        return out


def generate_dataset(config: ScenarioConfig, rng=None) -> SimData:
    rng = np.random.default_rng(config.seed if rng is None else rng)
    n = config.n_pairs
    if config.template == "ohie":
        x = _ohie_covariates(rng, n)
        rate = ohie_compliance(x)
        effect = ohie_effect(x, config.ohie_magnitude)
        cell = np.full(n, -1)
    else:
        x = rng.binomial(1, 0.5, size=(n, config.n_covariates)).astype(float)
        cell = (2 * x[:, 0] + x[:, 1]).astype(int)
        rate = config.cell_compliance()[cell]
        effect = np.asarray(config.effects, dtype=float)[cell]
    if np.any((rate < 0) | (rate > 1)):
        raise ValueError("compliance rates outside [0, 1]")
    d1 = (rng.random((n, 2)) < rate[:, None]).astype(float)
    if config.one_sided:
        d0 = np.zeros((n, 2))
    else:
        d0 = (rng.random((n, 2)) < config.always_taker_rate).astype(float)
        d1 = np.maximum(d1, d0)
    base = rng.standard_normal((n, 2))
    r0 = base + d0 * effect[:, None]
    r1 = base + d1 * effect[:, None]
    treated = rng.integers(0, 2, size=n)
    return SimData(config, x, cell, effect, d0, d1, r0, r1, treated)


def _ohie_covariates(rng, n: int) -> np.ndarray:
    cols = []
    for name in OHIE_COVARIATES:
        if name == "age":
            cols.append(rng.integers(19, 65, size=n).astype(float))
        else:
            cols.append(rng.binomial(1, OHIE_MARGINALS[name], size=n).astype(float))
    return np.column_stack(cols)


@dataclass(frozen=True)
class PipelineParams:
    lambda0: float = 0.0
    alpha: float = 0.05
    tree: TreeConfig = TreeConfig()
    use_abs: bool = True


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def _bits(leaf_ids) -> int:
    return sum(1 << int(k) for k in leaf_ids)


def replicate(config: ScenarioConfig, params: PipelineParams, rep: int) -> dict:
    """Run one replication and return its raw counts."""
    sim = generate_dataset(config, replication_rng(config.seed, rep))
    data = sim.pairs
    y = data.adjusted(params.lambda0)
    tree = fit_tree(np.abs(y) if params.use_abs else y, data.x, params.tree, data.covariate_names)
    grouping = grouping_from_tree(tree)
    report = run_closed_test(grouping, data, params.lambda0, params.alpha, estimates=False)
    g = grouping.n_leaves

    pair_false = sim.effect != params.lambda0
    leaf_false = np.array([pair_false[s].any() for s in grouping.leaves])
    false_bits = _bits(np.flatnonzero(leaf_false))

    masks = np.arange(1, 1 << g)
    is_false = (masks & false_bits) != 0
    dec = report.decisions[1:]
    rejected = dec == REJECTED
    tested = dec != SKIPPED
    n_true = int((~is_false).sum())
    false_rej = int((rejected & ~is_false).sum())

    node_false = node_false_rej = 0
    for nd in tree.nodes():
        m = _bits(nd.leaf_ids)
        if m & false_bits:
            node_false += 1
            node_false_rej += int(report.decisions[m] == REJECTED)

    names = data.covariate_names
    selected = set()
    for nd in tree.internal_nodes():
        if (report.decisions[_bits(nd.left.leaf_ids)] == REJECTED
                or report.decisions[_bits(nd.right.leaf_ids)] == REJECTED):
            selected.add(names[nd.feature])
    truth = config.true_modifiers()

    leaf_cells = []
    if config.template == "binary":
        for k, s in enumerate(grouping.leaves):
            if leaf_false[k]:
                dominant = int(np.argmax(np.bincount(sim.cell[s], minlength=4)))
                leaf_cells.append((dominant, bool(report.leaf_rejected[k])))

    return {
        "rep": rep,
        "n_leaves": g,
        "node_false": node_false,
        "node_false_rejected": node_false_rej,
        "subset_false": int(is_false.sum()),
        "subset_false_tested": int((is_false & tested).sum()),
        "subset_false_rejected": int((is_false & rejected).sum()),
        "false_rejections": false_rej,
        "type1_prop": false_rej / n_true if n_true else 0.0,
        "tp": len(selected & truth),
        "fp": len(selected - truth),
        "fn": len(truth - selected),
        "negatives": len(names) - len(truth),
        "leaf_cells": leaf_cells,
        "compliance": float(np.mean(data.treatment_diff)),
        "n_tests": report.n_tests,
    }


def _ratio(num: float, den: float) -> float:
    return num / den if den else float("nan")


@dataclass(frozen=True)
class MetricsRecord:
    """Aggregated operating characteristics over replications.

    ``true_discovery_rate`` counts the hypotheses attached to tree nodes
    (every leaf and internal node). ``tdr_all_subsets`` and
    ``tdr_tested_subsets`` use all unions of leaves, respectively those the
    closed test actually evaluated. ``f_score`` is NaN when there is
    nothing to find and nothing was found.
    """

    scenario: str
    compliance: float
    n_reps: int
    true_discovery_rate: float
    tdr_all_subsets: float
    tdr_tested_subsets: float
    fpr: float
    f_score: float
    fwer: float
    mean_type1: float
    mean_leaves: float
    realized_compliance: float
    per_leaf: dict
    hypotheses: str = "tree nodes (leaves and internal nodes)"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def aggregate(config: ScenarioConfig, outcomes: list[dict]) -> MetricsRecord:
    outcomes = sorted(outcomes, key=lambda o: o["rep"])
    tot = {k: sum(o[k] for o in outcomes) for k in (
        "node_false", "node_false_rejected", "subset_false", "subset_false_tested",
        "subset_false_rejected", "tp", "fp", "fn", "negatives")}
    per_leaf = {}
    for cell_idx, label in enumerate(CELLS):
        hits = [rej for o in outcomes for c, rej in o["leaf_cells"] if c == cell_idx]
        if hits:
            per_leaf[label] = {"leaves": len(hits), "rejected": int(sum(hits)),
                               "tdr": sum(hits) / len(hits)}
    n = len(outcomes)
    return MetricsRecord(
        scenario=config.name,
        compliance=config.compliance,
        n_reps=n,
        true_discovery_rate=_ratio(tot["node_false_rejected"], tot["node_false"]),
        tdr_all_subsets=_ratio(tot["subset_false_rejected"], tot["subset_false"]),
        tdr_tested_subsets=_ratio(tot["subset_false_rejected"], tot["subset_false_tested"]),
        fpr=_ratio(tot["fp"], tot["negatives"]),
        f_score=_ratio(tot["tp"], tot["tp"] + 0.5 * (tot["fp"] + tot["fn"])),
        fwer=sum(o["false_rejections"] > 0 for o in outcomes) / n,
        mean_type1=float(np.mean([o["type1_prop"] for o in outcomes])),
        mean_leaves=float(np.mean([o["n_leaves"] for o in outcomes])),
        realized_compliance=float(np.mean([o["compliance"] for o in outcomes])),
        per_leaf=per_leaf,
    )


def _map(fn, args, n_jobs):
    if n_jobs == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, *zip(*args), chunksize=max(1, len(args) // (4 * n_jobs))))


def run_replications(config: ScenarioConfig, params: PipelineParams | None = None,
                     n_reps: int = 1000, n_jobs: int = 1) -> MetricsRecord:
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    params = params or PipelineParams()
    outcomes = _map(replicate, [(config, params, r) for r in range(n_reps)], n_jobs)
    return aggregate(config, outcomes)


@dataclass(frozen=True)
class HonestyResult:
    p_values: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    use_abs: bool


def _first_leaf_p(config: ScenarioConfig, params: PipelineParams, rep: int) -> float:
    sim = generate_dataset(config, replication_rng(config.seed, rep))
    data = sim.pairs
    y = data.adjusted(params.lambda0)
    tree = fit_tree(np.abs(y) if params.use_abs else y, data.x, params.tree, data.covariate_names)
    first = tree.leaves()[0].indices
    if first.size < 2:
        return float("nan")
    return pair_statistics(data, params.lambda0, subset=first).p_value


def honesty_diagnostic(config: ScenarioConfig, n_reps: int = 2000, use_abs: bool = True,
                       params: PipelineParams | None = None, n_jobs: int = 1) -> HonestyResult:
    """p-values of the first leaf's null after growing the tree on |Y| or Y.

    The default tree settings are the liberal ones (cp 1e-4, depth 4) so
    that splitting, and thus any selection effect, happens in most
    replications.
    """
    params = params or PipelineParams(tree=TreeConfig.liberal())
    params = dataclasses.replace(params, use_abs=use_abs)
    ps = np.array(_map(_first_leaf_p, [(config, params, r) for r in range(n_reps)], n_jobs))
    ps = ps[np.isfinite(ps)]
    ks = stats.kstest(ps, "uniform")
    return HonestyResult(ps, float(ks.statistic), float(ks.pvalue), use_abs)


def trend_excluding_dip(grid, values) -> tuple[float, list[int]]:
    """Spearman correlation of ``values`` with ``grid`` after removing one dip.

    The dip is the run of points after the local maximum that starts the
    largest drop, up to and including the local minimum where the drop
    ends. Returns the correlation and the indices that were removed.
    """
    v = np.asarray(values, dtype=float)
    best_drop, dip = 0.0, []
    for i in range(len(v) - 1):
        if v[i + 1] >= v[i]:
            continue
        if i > 0 and v[i - 1] > v[i]:
            continue
        j = i + 1
        while j + 1 < len(v) and v[j + 1] < v[j]:
            j += 1
        if v[i] - v[j] > best_drop:
            best_drop, dip = v[i] - v[j], list(range(i + 1, j + 1))
    keep = [k for k in range(len(v)) if k not in dip]
    rho = stats.spearmanr(np.asarray(grid)[keep], v[keep]).statistic if len(keep) > 2 else float("nan")
    return float(rho), dip
