"""Simulated multi-group Gaussian graphical models.

Precision matrices have block-diagonal support. Within each block every
pair is an edge with probability ``edge_prob``, with raw magnitude uniform
on ``+-[0.4, 0.6]``. A raw matrix is made positive definite by dividing
each row by ``1.5`` times its absolute row sum, symmetrizing, and setting
the diagonal to one, which leaves it strictly diagonally dominant.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .sampler import GroupData

__all__ = [
    "Scenario",
    "ScenarioSpec",
    "SimulatedScenario",
    "CALIBRATED_EDGE_PROB",
    "generate_precision_set",
    "sample_mvn",
    "generate_scenario",
    "write_scenario",
    "read_truth",
    "read_group_csv",
]

#: Within-block edge probability giving 82.5 expected edges at p = 50 with
#: blocks of 10 (5 blocks x 45 pairs x 0.3667).
CALIBRATED_EDGE_PROB = 82.5 / 225.0

_MAGNITUDE = (0.4, 0.6)
_DOMINANCE = 1.5
_MAX_ATTEMPTS = 20


class Scenario(enum.Enum):
    Independent = "independent"
    Coupled = "coupled"
    P2020 = "p2020"
    FullDependence = "full"


@dataclass(frozen=True)
class ScenarioSpec:
    """Settings of one simulated data set.

    ``perturb_frac`` applies to ``P2020`` only: each group after the first
    deletes ``round(perturb_frac / 2 * |E|)`` edges of its predecessor and
    adds as many new within-block edges.
    """

    scenario: Scenario = Scenario.Coupled
    K: int = 4
    p: int = 50
    n: int = 50
    block_size: int = 10
    edge_prob: float = CALIBRATED_EDGE_PROB
    perturb_frac: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.scenario, Scenario):
            object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.K < 1 or self.p < 2 or self.n < 1:
            raise ValueError("need K >= 1, p >= 2, n >= 1")
        if self.block_size not in (5, 10):
            raise ValueError("block_size must be 5 or 10")
        if self.p % self.block_size:
            raise ValueError(f"p = {self.p} is not a multiple of block_size = {self.block_size}")
        if self.scenario is Scenario.Coupled and self.K % 2:
            raise ValueError("the coupled scenario needs an even number of groups")
        if not 0.0 <= self.edge_prob <= 1.0 or not 0.0 <= self.perturb_frac <= 1.0:
            raise ValueError("edge_prob and perturb_frac must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        return d


@dataclass
class SimulatedScenario:
    """Generated data with its ground truth."""

    spec: ScenarioSpec
    data: GroupData
    omega: np.ndarray
    adjacency: np.ndarray
    regenerations: int


def _block_pairs(p: int, block_size: int) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = [], []
    for start in range(0, p, block_size):
        bi, bj = np.triu_indices(block_size, 1)
        ii.append(bi + start)
        jj.append(bj + start)
    return np.concatenate(ii), np.concatenate(jj)


def _draw_magnitudes(m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(*_MAGNITUDE, size=m) * rng.choice([-1.0, 1.0], size=m)


def _stabilize(raw: np.ndarray) -> np.ndarray:
    """Row-dominance rescaling of a raw symmetric edge-weight matrix."""
    a = raw.copy()
    np.fill_diagonal(a, 0.0)
    rows = np.abs(a).sum(axis=1)
    scale = np.where(rows > 0, _DOMINANCE * rows, 1.0)
    a = a / scale[:, None]
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    return a


def _is_pd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def _raw_graph(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    ii, jj = _block_pairs(spec.p, spec.block_size)
    on = rng.random(ii.size) < spec.edge_prob
    raw = np.zeros((spec.p, spec.p))
    vals = _draw_magnitudes(int(on.sum()), rng)
    raw[ii[on], jj[on]] = vals
    raw[jj[on], ii[on]] = vals
    return raw


def _perturb(raw: np.ndarray, spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    ii, jj = _block_pairs(spec.p, spec.block_size)
    present = raw[ii, jj] != 0.0
    on, off = np.flatnonzero(present), np.flatnonzero(~present)
    m = int(round(spec.perturb_frac / 2.0 * on.size))
    m = min(m, on.size, off.size)
    out = raw.copy()
    drop = rng.choice(on, size=m, replace=False)
    add = rng.choice(off, size=m, replace=False)
    out[ii[drop], jj[drop]] = out[jj[drop], ii[drop]] = 0.0
    vals = _draw_magnitudes(m, rng)
    out[ii[add], jj[add]] = vals
    out[jj[add], ii[add]] = vals
    return out


def _precision_from(make_raw) -> tuple[np.ndarray, np.ndarray, int]:
    """Draw raw graphs until the stabilized matrix is PD; returns (raw, omega, retries)."""
    for attempt in range(_MAX_ATTEMPTS):
        raw = make_raw()
        omega = _stabilize(raw)
        if _is_pd(omega):
            return raw, omega, attempt
    raise RuntimeError(f"no positive definite precision matrix after {_MAX_ATTEMPTS} attempts")


def generate_precision_set(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    """True precision matrices and adjacencies for every group.

    Returns
    -------
    omega : ndarray
        ``K x p x p``, unit diagonal, positive definite.
    adjacency : ndarray of bool
        ``K x p x p`` nonzero pattern of the off-diagonals.
    regenerations : int
        Number of rejected (non-PD) draws.
    """
    K = spec.K
    omegas = np.empty((K, spec.p, spec.p))
    regen = 0
    sc = spec.scenario
    if sc is Scenario.Independent:
        for k in range(K):
            _, omegas[k], r = _precision_from(lambda: _raw_graph(spec, rng))
            regen += r
    elif sc is Scenario.Coupled:
        for k in range(0, K, 2):
            _, om, r = _precision_from(lambda: _raw_graph(spec, rng))
            omegas[k] = omegas[k + 1] = om
            regen += r
    elif sc is Scenario.FullDependence:
        _, om, regen = _precision_from(lambda: _raw_graph(spec, rng))
        omegas[:] = om
    else:
        raw, omegas[0], regen = _precision_from(lambda: _raw_graph(spec, rng))
        for k in range(1, K):
            prev = raw
            raw, omegas[k], r = _precision_from(lambda: _perturb(prev, spec, rng))
            regen += r
    adj = omegas != 0.0
    for k in range(K):
        np.fill_diagonal(adj[k], False)
    return omegas, adj, regen


def sample_mvn(Sigma: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` rows i.i.d. ``N(0, Sigma)`` through the Cholesky factor.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``Sigma`` is not positive definite.
    """
    L = np.linalg.cholesky(np.asarray(Sigma, dtype=float))
    return rng.standard_normal((int(n), L.shape[0])) @ L.T


def generate_scenario(spec: ScenarioSpec) -> SimulatedScenario:
    """Precision matrices, then ``n`` observations per group, from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    omegas, adj, regen = generate_precision_set(spec, rng)
    Ys = [sample_mvn(np.linalg.inv(om), spec.n, rng) for om in omegas]
    return SimulatedScenario(spec, GroupData.from_observations(Ys), omegas, adj, regen)


def write_scenario(out_dir, sim: SimulatedScenario) -> list[Path]:
    """Write ``group_<k>.csv`` files and ``truth.json``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = sim.spec.p
    for k, y in enumerate(sim.data.Y):
        path = out / f"group_{k + 1}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(p)])
            w.writerows([[repr(float(v)) for v in row] for row in y])
        paths.append(path)
    truth = {
        "spec": sim.spec.to_dict(),
        "generator": {"magnitude": list(_MAGNITUDE), "dominance": _DOMINANCE},
        "regenerations": sim.regenerations,
        "omega": sim.omega.tolist(),
        "edges": [[int(v) for v in np.flatnonzero(sim.adjacency[k][np.triu_indices(p, 1)])]
                  for k in range(sim.spec.K)],
    }
    path = out / "truth.json"
    with open(path, "w") as fh:
        json.dump(truth, fh, indent=1)
    paths.append(path)
    return paths


def read_truth(path) -> tuple[np.ndarray, np.ndarray]:
    """``(omega, adjacency)`` from a ``truth.json`` file."""
    with open(path) as fh:
        t = json.load(fh)
    omega = np.asarray(t["omega"], dtype=float)
    adj = omega != 0.0
    for k in range(adj.shape[0]):
        np.fill_diagonal(adj[k], False)
    return omega, adj


def read_group_csv(path) -> np.ndarray:
    """Numeric matrix from a comma-separated file with an optional header row.

    Raises
    ------
    ValueError
        With the 1-based row and column of the first bad field.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no data")
    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1
    if start == len(rows):
        raise ValueError(f"{path}: header only, no data rows")
    width = len(rows[start])
    out = np.empty((len(rows) - start, width))
    for r in range(start, len(rows)):
        if len(rows[r]) != width:
            raise ValueError(f"{path}: row {r + 1} has {len(rows[r])} fields, expected {width}")
        for c, cell in enumerate(rows[r]):
            try:
                v = float(cell)
            except ValueError:
                raise ValueError(f"{path}: row {r + 1}, column {c + 1}: not a number: {cell!r}") from None
            if not np.isfinite(v):
                raise ValueError(f"{path}: row {r + 1}, column {c + 1}: non-finite value")
            out[r - start, c] = v
    return out
