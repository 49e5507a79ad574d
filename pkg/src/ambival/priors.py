"""Parametric ambiguity sets via one-step density factors.

A measure change away from the base measure is encoded as a positive
martingale built from one-step factors ``f_t(theta)``: each factor is known at
time ``t``, strictly positive, and has conditional mean 1 given time ``t - 1``.
Adapted parameter selections (one theta per time, possibly state-dependent)
generate the rectangular hull of the parametric family; pasting two density
processes at a stopping time stays inside that hull.

Parameter uncertainty is described by ellipsoidal regions with a chi-square
radius, including orthogonal projections (which keep the full-dimensional
radius) and deterministic boundary/interior grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.stats import chi2, norm, qmc

from .errors import ValidationError
from .scenario import ScenarioLattice, StoppingTime

_MARTINGALE_TOL = 1e-10


# ---------------------------------------------------------------------------
# density families
# ---------------------------------------------------------------------------


class DensityFamily:
    """One-step density factors ``f_t(theta)`` on a scenario backend.

    Subclasses implement :meth:`factors` (lattice backends: one factor per
    time-``t`` node) and/or :meth:`step` (pointwise evaluation against a
    caller-supplied innovation context).
    """

    dim: int = 1
    region: Optional["ParamRegion"] = None

    def factors(self, t: int, theta: Any) -> np.ndarray:
        raise NotImplementedError

    def step(self, t: int, theta: Any, context: Any) -> float:
        raise NotImplementedError


class ExponentialTiltFamily(DensityFamily):
    """Conditionally normalized exponential tilt of a per-node score on a lattice.

    ``f_t(theta)`` at a node is ``exp(theta * score) / Z(parent)`` with the
    normalizer chosen per parent, so conditional mean 1 holds exactly by
    construction and every factor is strictly positive.
    """

    def __init__(
        self,
        lattice: ScenarioLattice,
        scores: Sequence[np.ndarray],
        region: Optional["ParamRegion"] = None,
    ) -> None:
        self.lattice = lattice
        self.scores = [np.asarray(s, dtype=np.float64) for s in scores]
        if len(self.scores) != lattice.horizon + 1:
            raise ValidationError("need one score array per level 0..T")
        self.dim = 1
        self.region = region

    def factors(self, t: int, theta: Any) -> np.ndarray:
        lat = self.lattice
        theta = float(np.asarray(theta).reshape(-1)[0])
        raw = np.exp(theta * self.scores[t])
        starts = lat.child_offsets[t - 1][:-1]
        z = np.add.reduceat(lat.probs[t] * raw, starts)
        return raw / z[lat.parents[t]]


class ExplicitFactorFamily(DensityFamily):
    """Lattice family with hand-specified factor arrays per (theta, level)."""

    def __init__(
        self,
        lattice: ScenarioLattice,
        tables: Dict[Hashable, Sequence[np.ndarray]],
        region: Optional["ParamRegion"] = None,
    ) -> None:
        self.lattice = lattice
        self.tables = {
            k: [np.asarray(a, dtype=np.float64) for a in v] for k, v in tables.items()
        }
        self.dim = 1
        self.region = region

    def factors(self, t: int, theta: Any) -> np.ndarray:
        return self.tables[theta][t - 1]


def density_step(family: DensityFamily, t: int, theta: Any, context: Any = None) -> float:
    """Evaluate one factor ``f_t(theta)``, enforcing domain and positivity."""
    if family.region is not None and not family.region.membership(theta):
        raise ValidationError(f"theta {theta!r} outside the parameter region")
    value = family.step(t, theta, context)
    if not value > 0.0:
        raise ValidationError(f"density factor not positive at t={t}, theta={theta!r}")
    return float(value)


# ---------------------------------------------------------------------------
# density processes on lattices
# ---------------------------------------------------------------------------


@dataclass
class DensityProcess:
    """Positive base-measure martingale ``D_t`` with ``D_0 = 1`` on a lattice."""

    lattice: ScenarioLattice
    values: List[np.ndarray]

    def __post_init__(self) -> None:
        self.values = [np.asarray(v, dtype=np.float64) for v in self.values]
        self.validate()

    def validate(self) -> None:
        lat = self.lattice
        if len(self.values) != lat.horizon + 1:
            raise ValidationError("density process must cover levels 0..T")
        if abs(self.values[0][0] - 1.0) > _MARTINGALE_TOL:
            raise ValidationError("density process must start at 1")
        for t, v in enumerate(self.values):
            if len(v) != lat.n_nodes(t):
                raise ValidationError(f"density level {t} has wrong length")
            if np.any(v <= 0.0):
                raise ValidationError(f"density process not positive at level {t}")
        for t in range(lat.horizon):
            cond = np.add.reduceat(
                lat.probs[t + 1] * self.values[t + 1], lat.child_offsets[t][:-1]
            )
            err = np.max(np.abs(cond - self.values[t]))
            if err > _MARTINGALE_TOL * max(1.0, float(np.max(self.values[t]))):
                raise ValidationError(
                    f"martingale property violated at level {t} (error {err:.3g})"
                )

    def ratio(self, t: int) -> np.ndarray:
        """One-step factor ``D_t / D_{t-1}`` per time-``t`` node."""
        return self.values[t] / self.values[t - 1][self.lattice.parents[t]]

    def expectation(self, t: int) -> float:
        return float(np.dot(self.lattice.path_probs(t), self.values[t]))


Selection = Union[Any, Dict[int, Any]]


def _selection_thetas(
    lattice: ScenarioLattice, selection: Selection, t: int
) -> List[Any]:
    """Thetas used for the step ``t`` factor, one per time-``t - 1`` node."""
    n_prev = lattice.n_nodes(t - 1)
    if isinstance(selection, dict):
        if t not in selection:
            raise ValidationError(f"selection missing period {t}")
        entry = selection[t]
    else:
        entry = selection
    # Per-state (rectangular) choices are given as a list indexed by the
    # time-(t - 1) nodes; any other type is a single theta used at all states.
    if isinstance(entry, list):
        if len(entry) != n_prev:
            raise ValidationError(
                f"selection at period {t} has {len(entry)} entries; an adapted "
                f"choice must read only the {n_prev} time-{t - 1} states"
            )
        return list(entry)
    return [entry] * n_prev


def density_process(
    family: DensityFamily, selection: Selection, lattice: Optional[ScenarioLattice] = None
) -> DensityProcess:
    """Density process of an adapted parameter selection.

    ``selection`` is a constant theta, a per-period dict of thetas, or a
    per-period dict of per-state theta lists indexed by time-``t - 1`` nodes
    (the rectangular-hull case).  The result is validated as a positive
    martingale starting at 1.
    """
    lat = lattice if lattice is not None else getattr(family, "lattice", None)
    if lat is None:
        raise ValidationError("density_process needs a lattice backend")
    values = [np.ones(1)]
    for t in range(1, lat.horizon + 1):
        thetas = _selection_thetas(lat, selection, t)
        if family.region is not None:
            for th in thetas:
                if not family.region.membership(th):
                    raise ValidationError(f"selected theta {th!r} outside the region")
        unique: Dict[Any, np.ndarray] = {}
        factor = np.empty(lat.n_nodes(t))
        for j, th in enumerate(thetas):
            try:
                key = th
                hash(key)
            except TypeError:
                key = id(th)
            if key not in unique:
                unique[key] = np.asarray(family.factors(t, th), dtype=np.float64)
            children = lat.children(t - 1, j)
            factor[children] = unique[key][children]
        values.append(values[-1][lat.parents[t]] * factor)
    return DensityProcess(lattice=lat, values=values)


def paste(d1: DensityProcess, d2: DensityProcess, tau: StoppingTime) -> DensityProcess:
    """Splice two density processes at a stopping time.

    The result takes one-step factors from ``d1`` while ``s <= tau`` and from
    ``d2`` afterwards; with both inputs valid and ``tau <= T`` adapted, the
    output is again a valid density process.
    """
    lat = d1.lattice
    if d2.lattice is not lat or tau.lattice is not lat:
        raise ValidationError("paste requires both processes and tau on one lattice")
    if tau.max_value() > lat.horizon:
        raise ValidationError("pasting requires a stopping time bounded by the horizon")
    values = [np.ones(1)]
    for s in range(1, lat.horizon + 1):
        after = tau.stopped_by[s - 1][lat.parents[s]]  # {s > tau}, known at s - 1
        ratio = np.where(after, d2.ratio(s), d1.ratio(s))
        values.append(values[-1][lat.parents[s]] * ratio)
    return DensityProcess(lattice=lat, values=values)


def mix(d1: DensityProcess, d2: DensityProcess, c: float) -> DensityProcess:
    """Convex combination ``c d1 + (1 - c) d2`` of density processes."""
    if not 0.0 <= c <= 1.0:
        raise ValidationError("mixing weight must lie in [0,1]")
    return DensityProcess(
        lattice=d1.lattice,
        values=[c * a + (1.0 - c) * b for a, b in zip(d1.values, d2.values)],
    )


# ---------------------------------------------------------------------------
# ellipsoidal parameter regions
# ---------------------------------------------------------------------------


@dataclass
class ParamRegion:
    """Ellipsoid ``{mu + r L s : r^2 <= radius2, |s| = 1}``.

    ``L`` is the lower-triangular Cholesky factor of the covariance; the
    Mahalanobis membership test is evaluated by triangular solves, never by
    explicit inversion.  ``radius2 == 0`` encodes the degenerate singleton.
    """

    center: np.ndarray
    chol: np.ndarray
    radius2: float
    dim: int

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64).reshape(-1)
        self.chol = np.asarray(self.chol, dtype=np.float64)
        if self.center.shape != (self.dim,) or self.chol.shape != (self.dim, self.dim):
            raise ValidationError("region center/Cholesky shapes inconsistent with dim")
        if np.any(np.diag(self.chol) <= 0.0) or np.any(np.triu(self.chol, 1) != 0.0):
            raise ValidationError("Cholesky factor must be lower-triangular with positive diagonal")
        if self.radius2 < 0.0:
            raise ValidationError("squared radius must be nonnegative")

    def mahalanobis2(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        y = scipy.linalg.solve_triangular(self.chol, (z - self.center).T, lower=True)
        out = np.sum(y * y, axis=0)
        return out if out.size > 1 else out[0]

    def membership(self, z: np.ndarray) -> bool:
        return bool(self.mahalanobis2(np.asarray(z)) <= self.radius2 + 1e-10)

    def point(self, r: float, s: np.ndarray) -> np.ndarray:
        return self.center + r * (self.chol @ np.asarray(s, dtype=np.float64))

    @property
    def is_point(self) -> bool:
        return self.radius2 == 0.0


def point_region(center: np.ndarray) -> ParamRegion:
    """Degenerate region containing only ``center``."""
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    return ParamRegion(center=center, chol=np.eye(len(center)), radius2=0.0, dim=len(center))


def ellipsoid_region(mu: np.ndarray, sigma: np.ndarray, p: float, k: int) -> ParamRegion:
    """Approximate confidence region at level ``p`` for a ``k``-dim estimate.

    Radius is the chi-square(``k``) quantile of ``p`` applied to the squared
    Mahalanobis distance under ``(mu, sigma)``.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != (k,) or sigma.shape != (k, k):
        raise ValidationError("mu/sigma shapes inconsistent with k")
    if not 0.0 < p < 1.0:
        raise ValidationError("confidence level must lie in (0,1)")
    if np.max(np.abs(sigma - sigma.T)) > 1e-12 * max(1.0, np.max(np.abs(sigma))):
        raise ValidationError("covariance must be symmetric")
    try:
        chol = scipy.linalg.cholesky(0.5 * (sigma + sigma.T), lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ValidationError(f"covariance not positive definite: {exc}") from exc
    return ParamRegion(center=mu, chol=chol, radius2=float(chi2.ppf(p, k)), dim=k)


def project_region(region: ParamRegion, coords: Sequence[int]) -> ParamRegion:
    """Orthogonal projection onto a coordinate subset.

    The projected ellipsoid keeps the full-dimensional squared radius: it is
    the shadow of the original region, described by the sub-vector of the
    center and the Cholesky factor of the covariance sub-block.
    """
    coords = list(coords)
    if len(coords) == 0:
        raise ValidationError("coordinate subset must be nonempty")
    if any(c < 0 or c >= region.dim for c in coords):
        raise ValidationError("coordinate index out of range")
    sigma = region.chol @ region.chol.T
    sub = sigma[np.ix_(coords, coords)]
    return ParamRegion(
        center=region.center[coords],
        chol=scipy.linalg.cholesky(sub, lower=True),
        radius2=region.radius2,
        dim=len(coords),
    )


@dataclass
class BoundaryGrid:
    points: np.ndarray  # (m, k), all exactly on the admissible boundary
    n_dropped: int


def _sphere_points(k: int, m: int) -> np.ndarray:
    """Deterministic low-discrepancy directions on the unit sphere in R^k."""
    if k == 1:
        reps = (m + 1) // 2
        return np.array([[1.0], [-1.0]] * reps)[:m]
    if k == 2:
        ang = 2.0 * np.pi * np.arange(m) / m
        return np.column_stack([np.cos(ang), np.sin(ang)])
    u = qmc.Halton(d=k, scramble=False).random(m + 1)[1:]
    z = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def boundary_grid(
    region: ParamRegion,
    m: int,
    positive: Sequence[int] = (),
    lower: Optional[Dict[int, float]] = None,
    max_drop_fraction: float = 0.10,
) -> BoundaryGrid:
    """``m`` points exactly on the region boundary.

    Points violating admissibility constraints (``positive`` coordinates must
    be > 0; ``lower`` maps coordinate -> strict lower bound) are clipped out
    and counted; the grid fails loudly when more than ``max_drop_fraction``
    of the points are dropped.
    """
    if m < 2:
        raise ValidationError("boundary resolution must be at least 2")
    if region.is_point:
        return BoundaryGrid(points=region.center[None, :], n_dropped=0)
    s = _sphere_points(region.dim, m)
    pts = region.center + np.sqrt(region.radius2) * (s @ region.chol.T)
    keep = np.ones(len(pts), dtype=bool)
    for c in positive:
        keep &= pts[:, c] > 0.0
    for c, bound in (lower or {}).items():
        keep &= pts[:, c] > bound
    n_dropped = int(m - keep.sum())
    if n_dropped > max_drop_fraction * m:
        raise ValidationError(
            f"{n_dropped} of {m} boundary points violate admissibility constraints"
        )
    return BoundaryGrid(points=pts[keep], n_dropped=n_dropped)


def interior_grid(region: ParamRegion, m: int, positive: Sequence[int] = ()) -> np.ndarray:
    """Deterministic low-discrepancy grid of interior points (center included)."""
    if region.is_point:
        return region.center[None, :]
    k = region.dim
    u = qmc.Halton(d=k + 1, scramble=False).random(m + 1)[1:]
    z = norm.ppf(np.clip(u[:, :k], 1e-12, 1.0 - 1e-12))
    s = z / np.linalg.norm(z, axis=1, keepdims=True)
    r = np.sqrt(region.radius2) * u[:, k] ** (1.0 / k)
    pts = region.center + (r[:, None] * s) @ region.chol.T
    pts = np.vstack([region.center[None, :], pts])
    keep = np.ones(len(pts), dtype=bool)
    for c in positive:
        keep &= pts[:, c] > 0.0
    return pts[keep]
