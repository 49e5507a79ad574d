"""Filtered discrete-time scenario backends.

Two interchangeable representations of a filtered probability structure:

* :class:`ScenarioLattice` -- an exact finite tree with one node per state,
  strictly positive one-step transition probabilities and exact conditional
  expectations.  Used by the backward recursion and the brute-force oracle.
* :class:`PathSample` -- a seeded Monte Carlo matrix of standard normal
  innovations with derived process columns.  Used by the Gaussian case study,
  where interior conditional layers are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

_PROB_TOL = 1e-12
_WEIGHT_TOL = 1e-10
_BLOCK = 1 << 16


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------


@dataclass
class ScenarioLattice:
    """Finite filtered tree.

    Nodes at each time level are stored in parent order: the children of
    parent ``j`` at level ``t`` occupy the contiguous index range
    ``child_offsets[t][j]:child_offsets[t][j+1]`` at level ``t + 1``.

    Attributes:
        horizon: number of periods ``T``.
        parents: per level ``t``, integer array mapping node -> parent index
            at level ``t - 1`` (``parents[0] == [-1]``).
        probs: per level ``t``, one-step transition probability of each node
            conditional on its parent (``probs[0] == [1.0]``).
        payloads: named per-level value arrays attached to nodes.
    """

    horizon: int
    parents: List[np.ndarray]
    probs: List[np.ndarray]
    payloads: Dict[str, List[np.ndarray]] = field(default_factory=dict)
    child_offsets: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValidationError("lattice horizon must be at least 1")
        if len(self.parents) != self.horizon + 1 or len(self.probs) != self.horizon + 1:
            raise ValidationError("parents/probs must have one entry per level 0..T")
        if len(self.parents[0]) != 1:
            raise ValidationError("lattice must have exactly one root at t=0")
        self.parents = [np.asarray(p, dtype=np.int64) for p in self.parents]
        self.probs = [np.asarray(p, dtype=np.float64) for p in self.probs]
        if not self.child_offsets:
            self.child_offsets = self._build_child_offsets()
        self._validate()

    def _build_child_offsets(self) -> List[np.ndarray]:
        offsets = []
        for t in range(self.horizon):
            counts = np.bincount(self.parents[t + 1], minlength=self.n_nodes(t))
            if np.any(counts == 0):
                raise ValidationError(f"node without children at level {t}")
            if np.any(np.diff(self.parents[t + 1]) < 0):
                raise ValidationError("child nodes must be stored in parent order")
            offsets.append(np.concatenate(([0], np.cumsum(counts))))
        return offsets

    def _validate(self) -> None:
        for t in range(1, self.horizon + 1):
            p = self.probs[t]
            if np.any(p <= 0.0):
                bad = int(np.argmax(p <= 0.0))
                raise ValidationError(
                    f"non-positive transition probability at level {t}, node {bad}"
                )
            sums = np.add.reduceat(p, self.child_offsets[t - 1][:-1])
            off = np.abs(sums - 1.0)
            if np.any(off > _PROB_TOL):
                bad = int(np.argmax(off))
                raise ValidationError(
                    f"probabilities sum to {sums[bad]:.12g} for node {bad} "
                    f"at level {t - 1}"
                )
        for name, levels in self.payloads.items():
            for t, vals in enumerate(levels):
                if vals is None:
                    continue
                if not np.all(np.isfinite(vals)):
                    raise ValidationError(f"non-finite payload {name!r} at level {t}")

    def n_nodes(self, t: int) -> int:
        return len(self.parents[t])

    @property
    def n_total(self) -> int:
        return sum(self.n_nodes(t) for t in range(self.horizon + 1))

    def children(self, t: int, node: int) -> np.ndarray:
        """Indices at level ``t + 1`` of the children of ``node`` at level ``t``."""
        off = self.child_offsets[t]
        return np.arange(off[node], off[node + 1])

    def path_probs(self, t: int) -> np.ndarray:
        """Unconditional probability of each node at level ``t``."""
        out = np.ones(1)
        for s in range(1, t + 1):
            out = out[self.parents[s]] * self.probs[s]
        return out

    def lift(self, values: np.ndarray, from_t: int, to_t: int) -> np.ndarray:
        """Propagate a level-``from_t`` array down the tree to level ``to_t``."""
        out = np.asarray(values, dtype=np.float64)
        for s in range(from_t + 1, to_t + 1):
            out = out[self.parents[s]]
        return out

    def payload_process(self, name: str) -> "AdaptedProcess":
        levels = self.payloads[name]
        values = {t: np.asarray(v, dtype=np.float64) for t, v in enumerate(levels) if v is not None}
        return AdaptedProcess(name=name, values=values)


def build_lattice(
    transitions: Sequence[Sequence[Sequence[float]]],
    payloads: Optional[Dict[str, Sequence[Optional[Sequence[float]]]]] = None,
) -> ScenarioLattice:
    """Build a lattice from per-period transition rows.

    Args:
        transitions: ``transitions[t - 1]`` holds one probability row per
            time-``t - 1`` node, listing child probabilities at time ``t``.
        payloads: optional named per-level value arrays (``None`` entries for
            levels where a process is undefined).

    Raises:
        ValidationError: if a probability row is not a strictly positive
            distribution summing to 1 within 1e-12.
    """
    if len(transitions) < 1:
        raise ValidationError("need at least one period of transitions")
    horizon = len(transitions)
    parents: List[np.ndarray] = [np.array([-1])]
    probs: List[np.ndarray] = [np.array([1.0])]
    n_prev = 1
    for t, rows in enumerate(transitions, start=1):
        if len(rows) != n_prev:
            raise ValidationError(
                f"period {t} needs {n_prev} probability rows, got {len(rows)}"
            )
        par, prb = [], []
        for j, row in enumerate(rows):
            row = np.asarray(row, dtype=np.float64)
            if row.ndim != 1 or len(row) < 1:
                raise ValidationError(f"empty probability row for node {j} at level {t - 1}")
            if np.any(row <= 0.0):
                raise ValidationError(f"non-positive probability in row for node {j} at level {t - 1}")
            if abs(row.sum() - 1.0) > _PROB_TOL:
                raise ValidationError(
                    f"probabilities sum to {row.sum():.12g} for node {j} at level {t - 1}"
                )
            par.append(np.full(len(row), j, dtype=np.int64))
            prb.append(row)
        parents.append(np.concatenate(par))
        probs.append(np.concatenate(prb))
        n_prev = len(parents[-1])
    payload_arrays: Dict[str, List[np.ndarray]] = {}
    if payloads:
        for name, levels in payloads.items():
            if len(levels) != horizon + 1:
                raise ValidationError(f"payload {name!r} must list one array per level 0..T")
            payload_arrays[name] = [
                None if v is None else np.asarray(v, dtype=np.float64) for v in levels
            ]
            for t, v in enumerate(payload_arrays[name]):
                if v is not None and len(v) != len(parents[t]):
                    raise ValidationError(
                        f"payload {name!r} level {t} has {len(v)} values, expected {len(parents[t])}"
                    )
    return ScenarioLattice(horizon=horizon, parents=parents, probs=probs, payloads=payload_arrays)


# ---------------------------------------------------------------------------
# adapted processes
# ---------------------------------------------------------------------------


@dataclass
class AdaptedProcess:
    """Named process with one value array per time index.

    ``known_at[t]`` is the time from which the value indexed ``t`` is known;
    on a lattice it is the node level carrying ``values[t]``.  A predictable
    process such as the owner's payoff has ``known_at[t] == t - 1``.
    """

    name: str
    values: Dict[int, np.ndarray]
    known_at: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = {t: np.asarray(v, dtype=np.float64) for t, v in self.values.items()}
        for t in self.values:
            self.known_at.setdefault(t, t)

    def at(self, t: int) -> np.ndarray:
        return self.values[t]

    def times(self) -> List[int]:
        return sorted(self.values)


def assert_adapted(lattice: ScenarioLattice, proc: AdaptedProcess) -> None:
    """Check that each value array matches its measurability level on the lattice."""
    for t, vals in proc.values.items():
        level = proc.known_at[t]
        if level > t:
            raise ValidationError(f"{proc.name!r}: value at {t} claimed known only at {level}")
        if len(vals) != lattice.n_nodes(level):
            raise ValidationError(
                f"{proc.name!r}: {len(vals)} values at time {t}, "
                f"expected {lattice.n_nodes(level)} (level {level})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"{proc.name!r}: non-finite value at time {t}")


def cond_expectation(
    lattice: ScenarioLattice,
    values_next: np.ndarray,
    t: int,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Exact conditional expectation ``E_t`` of a level-``t + 1`` value array.

    With ``weights`` (a one-step density factor per time-``t + 1`` node,
    positive and with conditional mean 1 per parent), computes the reweighted
    expectation ``E_t[w Y]`` realizing a change of measure.
    """
    if t < 0 or t >= lattice.horizon:
        raise ValidationError(f"time {t} outside [0, {lattice.horizon - 1}]")
    values_next = np.asarray(values_next, dtype=np.float64)
    if len(values_next) != lattice.n_nodes(t + 1):
        raise ValidationError(
            f"expected {lattice.n_nodes(t + 1)} values at level {t + 1}, got {len(values_next)}"
        )
    p = lattice.probs[t + 1]
    starts = lattice.child_offsets[t][:-1]
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights <= 0.0):
            raise ValidationError("density weights must be strictly positive")
        means = np.add.reduceat(p * weights, starts)
        if np.any(np.abs(means - 1.0) > _WEIGHT_TOL):
            bad = int(np.argmax(np.abs(means - 1.0)))
            raise ValidationError(
                f"weight conditional mean {means[bad]:.12g} != 1 for node {bad} at level {t}"
            )
        p = p * weights
    return np.add.reduceat(p * values_next, starts)


def cond_expectation_process(
    lattice: ScenarioLattice,
    proc: AdaptedProcess,
    t: int,
    weights: Optional[np.ndarray] = None,
) -> AdaptedProcess:
    """Process-level wrapper of :func:`cond_expectation` for time ``t + 1`` values."""
    if t + 1 not in proc.values:
        raise ValidationError(f"{proc.name!r} not defined at time {t + 1}")
    out = cond_expectation(lattice, proc.at(t + 1), t, weights)
    return AdaptedProcess(name=f"E_{t}[{proc.name}]", values={t: out})


# ---------------------------------------------------------------------------
# stopping times
# ---------------------------------------------------------------------------


@dataclass
class StoppingTime:
    """Adapted stopping time on a lattice, values in ``{0, ..., T + 1}``.

    Represented by per-level boolean arrays ``stopped_by[t][node] = (tau <= t)``;
    adaptedness is built into the representation and monotonicity along paths
    is validated.  ``T + 1`` (never stopped) encodes complete run-off.
    """

    lattice: ScenarioLattice
    stopped_by: List[np.ndarray]

    def __post_init__(self) -> None:
        lat = self.lattice
        if len(self.stopped_by) != lat.horizon + 1:
            raise ValidationError("stopped_by must cover levels 0..T")
        self.stopped_by = [np.asarray(s, dtype=bool) for s in self.stopped_by]
        for t, s in enumerate(self.stopped_by):
            if len(s) != lat.n_nodes(t):
                raise ValidationError(f"stopped_by[{t}] has wrong length")
        for t in range(1, lat.horizon + 1):
            inherited = self.stopped_by[t - 1][lat.parents[t]]
            if np.any(inherited & ~self.stopped_by[t]):
                raise ValidationError(f"stopping decision retracted at level {t}")

    @classmethod
    def constant(cls, lattice: ScenarioLattice, value: int) -> "StoppingTime":
        return cls(
            lattice,
            [np.full(lattice.n_nodes(t), t >= value) for t in range(lattice.horizon + 1)],
        )

    def value_at_leaves(self) -> np.ndarray:
        """tau along each terminal path (``T + 1`` when never stopped)."""
        lat = self.lattice
        out = np.full(lat.n_nodes(lat.horizon), lat.horizon + 1, dtype=np.int64)
        stopped = np.zeros(lat.n_nodes(lat.horizon), dtype=bool)
        idx = np.arange(lat.n_nodes(lat.horizon))
        ancestors = idx
        chain = [idx]
        for t in range(lat.horizon, 0, -1):
            ancestors = lat.parents[t][ancestors]
            chain.append(ancestors)
        chain.reverse()  # chain[t] = ancestor at level t per leaf
        for t in range(lat.horizon + 1):
            hit = self.stopped_by[t][chain[t]] & ~stopped
            out[hit] = t
            stopped |= hit
        return out

    def max_value(self) -> int:
        return int(self.value_at_leaves().max())


# ---------------------------------------------------------------------------
# path samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InnovationSpec:
    """Columns of iid innovations; only the standard normal family ships."""

    columns: Tuple[str, ...]
    family: str = "normal"

    def __post_init__(self) -> None:
        if self.family != "normal":
            raise ValidationError(f"unsupported innovation family {self.family!r}")
        if len(self.columns) == 0:
            raise ValidationError("innovation spec needs at least one column")
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("duplicate innovation column names")


def substream(seed: int, *ids: int) -> np.random.Generator:
    """Counter-based generator for an independent, reproducible substream."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(seed) & (2**63 - 1), *ids]))
    )


@dataclass
class PathSample:
    """Seeded Monte Carlo matrix of innovations plus derived process columns."""

    n_paths: int
    horizon: int
    seed: int
    spec: InnovationSpec
    draws: np.ndarray
    derived: Dict[str, np.ndarray] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name in self.spec.columns:
            return self.draws[:, self.spec.columns.index(name)]
        return self.derived[name]

    def add_derived(self, name: str, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n_paths,):
            raise ValidationError(f"derived column {name!r} has wrong shape")
        self.derived[name] = values


def simulate_paths(model: InnovationSpec, n: int, seed: int, horizon: int = 1) -> PathSample:
    """Simulate ``n`` paths of iid standard normal innovations.

    Deterministic in ``(model, n, seed)``.  Each column uses its own
    counter-based substream, and each column is generated in fixed blocks with
    per-block substreams, so adding a column or changing the block schedule
    never perturbs existing draws.
    """
    if n < 1:
        raise ValidationError("path count must be at least 1")
    draws = np.empty((n, len(model.columns)))
    for c in range(len(model.columns)):
        col = np.empty(n)
        for b, start in enumerate(range(0, n, _BLOCK)):
            stop = min(start + _BLOCK, n)
            col[start:stop] = substream(seed, c, b).standard_normal(stop - start)
        draws[:, c] = col
    return PathSample(n_paths=n, horizon=horizon, seed=seed, spec=model, draws=draws)


# ---------------------------------------------------------------------------
# serialization (test fixtures)
# ---------------------------------------------------------------------------


def lattice_to_tsv(lattice: ScenarioLattice) -> str:
    lines = [f"lattice\thorizon={lattice.horizon}"]
    names = sorted(lattice.payloads)
    for t in range(lattice.horizon + 1):
        for j in range(lattice.n_nodes(t)):
            cells = [
                "node",
                str(t),
                str(j),
                str(int(lattice.parents[t][j])),
                repr(float(lattice.probs[t][j])),
            ]
            for name in names:
                levels = lattice.payloads[name]
                if levels[t] is not None:
                    cells.append(f"{name}={float(levels[t][j])!r}")
            lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def lattice_from_tsv(text: str) -> ScenarioLattice:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split("\t")
    if head[0] != "lattice":
        raise ValidationError("not a lattice record")
    horizon = int(head[1].split("=")[1])
    parents: List[List[int]] = [[] for _ in range(horizon + 1)]
    probs: List[List[float]] = [[] for _ in range(horizon + 1)]
    payload: Dict[str, List[Dict[int, float]]] = {}
    for ln in lines[1:]:
        cells = ln.split("\t")
        t, j, par, pr = int(cells[1]), int(cells[2]), int(cells[3]), float(cells[4])
        if j != len(parents[t]):
            raise ValidationError("nodes out of order in lattice record")
        parents[t].append(par)
        probs[t].append(pr)
        for cell in cells[5:]:
            name, val = cell.split("=", 1)
            payload.setdefault(name, [dict() for _ in range(horizon + 1)])[t][j] = float(val)
    payloads = {
        name: [
            np.array([levels[t][j] for j in range(len(parents[t]))]) if levels[t] else None
            for t in range(horizon + 1)
        ]
        for name, levels in payload.items()
    }
    return ScenarioLattice(
        horizon=horizon,
        parents=[np.array(p) for p in parents],
        probs=[np.array(p) for p in probs],
        payloads=payloads,
    )


def sample_to_tsv(sample: PathSample) -> str:
    cols = ",".join(sample.spec.columns)
    lines = [
        f"paths\tn={sample.n_paths}\thorizon={sample.horizon}\tseed={sample.seed}\tcols={cols}"
    ]
    for i in range(sample.n_paths):
        lines.append("\t".join(repr(float(x)) for x in sample.draws[i]))
    return "\n".join(lines) + "\n"


def sample_from_tsv(text: str) -> PathSample:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = dict(cell.split("=", 1) for cell in lines[0].split("\t")[1:])
    spec = InnovationSpec(columns=tuple(head["cols"].split(",")))
    draws = np.array([[float(x) for x in ln.split("\t")] for ln in lines[1:]])
    return PathSample(
        n_paths=int(head["n"]),
        horizon=int(head["horizon"]),
        seed=int(head["seed"]),
        spec=spec,
        draws=draws,
    )
