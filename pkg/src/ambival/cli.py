"""Command-line front end.

A run is described by a small key-value config file (``key = value`` per
line, ``#`` comments) plus flag overrides; flags win.  Commands:

* ``validate``   -- config and engine self-checks on small random lattices
* ``table1``     -- full bound table over the (case, p, q) grid, CSV output
* ``figure1``    -- estimator scatter and region-boundary CSVs
* ``value``      -- one (case, p, q) bound computation
* ``oracle-check`` -- recursion vs brute-force enumeration on random trees

Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import NumericalError, ValidationError
from .gaussian import (
    C1_INF,
    C1_SUP,
    CASE1,
    CASE2,
    CaseConfig,
    GaussianModel,
    case1_bounds,
    case2_value,
    estimator_cloud,
    figure1_csv,
    figure1_data,
    region_for,
    table1,
    table1_csv,
)
from .riskmeasures import AVAR, VAR, RiskMeasureSpec

logger = logging.getLogger(__name__)

COMMANDS = ("validate", "table1", "figure1", "value", "oracle-check")


@dataclass
class RunConfig:
    command: str = "validate"
    seed: int = 0
    n: int = 10**5
    p: float = 0.5
    q: float = 0.05
    case: int = 1
    kind: str = VAR
    out: str = "."
    threads: int = 1
    m: int = 360
    knots: int = 64
    c1_rule: str = C1_INF
    cloud_n_rep: int = 10**5
    beta0: float = 2.0 / 3.0
    sigma0: float = 0.2
    beta1: float = 1.5
    sigma1: float = 0.2
    i0: int = -10

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ValidationError(
                f"unknown command {self.command!r}; valid: {', '.join(COMMANDS)}"
            )
        for name in ("p", "q"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValidationError("level must lie in (0,1)")
        if self.case not in (1, 2):
            raise ValidationError("case must be 1 or 2")
        if self.kind not in (VAR, AVAR):
            raise ValidationError(f"risk measure kind must be {VAR} or {AVAR}")
        if self.c1_rule not in (C1_INF, C1_SUP):
            raise ValidationError(f"c1_rule must be {C1_INF} or {C1_SUP}")
        if self.threads < 1:
            raise ValidationError("threads must be at least 1")

    def model(self) -> GaussianModel:
        return GaussianModel(
            beta0=self.beta0, sigma0=self.sigma0, beta1=self.beta1,
            sigma1=self.sigma1, i0=self.i0,
        )

    def to_manifest(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)!r}" for f in fields(self)]
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INT_KEYS = {"seed", "n", "case", "threads", "m", "knots", "cloud_n_rep", "i0"}
_FLOAT_KEYS = {"p", "q", "beta0", "sigma0", "beta1", "sigma1"}


def _coerce(key: str, raw: str):
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError as exc:
            raise ValidationError(f"key {key!r} needs an integer, got {raw!r}") from exc
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError as exc:
            raise ValidationError(f"key {key!r} needs a number, got {raw!r}") from exc
    return raw


def parse_config(
    path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None
) -> RunConfig:
    """Read the key-value config file and apply flag overrides (flags win)."""
    values: Dict[str, object] = {}
    valid = set(_FIELD_TYPES)
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in valid:
                raise ValidationError(
                    f"{path}:{lineno}: unknown key {key!r}; valid keys: "
                    f"{', '.join(sorted(valid))}"
                )
            values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in valid:
            raise ValidationError(
                f"unknown key {key!r}; valid keys: {', '.join(sorted(valid))}"
            )
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def _write(out_dir: Path, name: str, text: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)
    logger.info("wrote %s", out_dir / name)


def _matrix_lines(name: str, mat: np.ndarray) -> List[str]:
    return [
        f"{name}_{i} = {' '.join(repr(float(x)) for x in np.atleast_1d(row))}"
        for i, row in enumerate(np.atleast_2d(mat))
    ]


def _cmd_table1(cfg: RunConfig, out_dir: Path) -> None:
    result = table1(
        model=cfg.model(), n=cfg.n, seed=cfg.seed, cloud_n_rep=cfg.cloud_n_rep,
        kind=cfg.kind, c1_rule=cfg.c1_rule, threads=cfg.threads,
    )
    _write(out_dir, "table1.csv", table1_csv(result))
    manifest = cfg.to_manifest()
    manifest += "\n".join(
        _matrix_lines("mu", result.mu) + _matrix_lines("sigma", result.sigma)
    ) + "\n"
    _write(out_dir, "manifest.txt", manifest)
    for row in result.rows:
        print(
            f"{row['case']} p={row['p']} q={row['q']}: "
            f"({row['lower']:.3f}, {row['upper']:.3f})"
        )


def _cmd_figure1(cfg: RunConfig, out_dir: Path) -> None:
    data = figure1_data(model=cfg.model(), n_rep=1000, seed=cfg.seed, m_boundary=cfg.m)
    for name, text in figure1_csv(data).items():
        _write(out_dir, name, text)
    manifest = cfg.to_manifest()
    manifest += "\n".join(
        _matrix_lines("mu", data.cloud.mu) + _matrix_lines("sigma", data.cloud.sigma)
    ) + "\n"
    _write(out_dir, "manifest.txt", manifest)
    print(f"figure1: {len(figure1_csv(data))} files in {out_dir}")


def _cmd_value(cfg: RunConfig, out_dir: Path) -> None:
    model = cfg.model()
    cloud = estimator_cloud(model, cfg.cloud_n_rep, cfg.seed)
    region = region_for(cloud, cfg.p)
    case = CASE1 if cfg.case == 1 else CASE2
    case_cfg = CaseConfig(
        case=case, rm=RiskMeasureSpec(cfg.kind, cfg.q), p=cfg.p, n=cfg.n,
        seed=cfg.seed, m_boundary=cfg.m, knots=cfg.knots, c1_rule=cfg.c1_rule,
        threads=cfg.threads,
    )
    if cfg.case == 1:
        lower, upper, _ = case1_bounds(case_cfg, model, region)
    else:
        lower, upper, _ = case2_value(case_cfg, model, region)
    _write(
        out_dir, "value.csv",
        "case,p,q,lower,upper,n,seed\n"
        f"{case},{cfg.p!r},{cfg.q!r},{lower!r},{upper!r},{cfg.n},{cfg.seed}\n",
    )
    _write(out_dir, "manifest.txt", cfg.to_manifest())
    print(f"{case} p={cfg.p} q={cfg.q}: ({lower:.3f}, {upper:.3f})")


def _random_suite(seed: int, n_instances: int):
    """Random small lattices with tilt families for self-checks."""
    from .priors import ExponentialTiltFamily
    from .scenario import build_lattice

    rng = np.random.default_rng(seed)
    shapes = [(1, 3), (2, 2), (2, 3), (3, 2)]
    for trial in range(n_instances):
        horizon, branching = shapes[trial % len(shapes)]
        transitions = []
        n_nodes = 1
        for _ in range(horizon):
            rows = []
            for _ in range(n_nodes):
                w = rng.uniform(0.1, 1.0, branching)
                rows.append(w / w.sum())
            transitions.append(rows)
            n_nodes *= branching
        lattice = build_lattice(transitions)
        payload = {t: rng.uniform(-1.0, 1.0, lattice.n_nodes(t)) for t in range(1, horizon + 1)}
        scores = [rng.normal(0.0, 1.0, lattice.n_nodes(t)) for t in range(horizon + 1)]
        family = ExponentialTiltFamily(lattice, scores)
        grid = [-0.5, 0.7] if (horizon, branching) == (3, 2) else [-0.5, 0.0, 0.7]
        yield lattice, payload, family, grid


def _cmd_oracle_check(cfg: RunConfig, out_dir: Path, n_instances: int = 200) -> None:
    from .oracle import snell_bruteforce
    from .riskmeasures import RiskMeasureSpec
    from .scenario import AdaptedProcess
    from .valuation import CashFlowSpec, value_multiprior

    worst = 0.0
    for i, (lattice, payload, family, grid) in enumerate(
        _random_suite(cfg.seed, n_instances)
    ):
        cf = CashFlowSpec(liability=AdaptedProcess(name="X", values=payload))
        rm = RiskMeasureSpec(AVAR if i % 2 else VAR, 0.1)
        out = value_multiprior(cf, rm, family, grid, lattice)
        res = snell_bruteforce(lattice, family, grid, out.R, payload, cap=2 * 10**6)
        worst = max(
            worst,
            abs(res.sup_inf - out.c0),
            abs(res.inf_sup - out.c0),
            abs(res.envelope - out.c0),
        )
    if worst > 1e-12:
        raise NumericalError(f"recursion vs oracle mismatch: max deviation {worst:.3e}")
    report = f"oracle-check: {n_instances} lattices, max |engine - oracle| = {worst:.3e}\n"
    _write(out_dir, "oracle_check.txt", report)
    print(report, end="")


def _cmd_validate(cfg: RunConfig, out_dir: Path) -> None:
    from .priors import density_process
    from .riskmeasures import RiskMeasureSpec
    from .scenario import AdaptedProcess
    from .valuation import CashFlowSpec, supermartingale_diagnostic, value_multiprior

    cfg.model()  # validates model parameters
    checks = 0
    for lattice, payload, family, grid in _random_suite(cfg.seed, 8):
        cf = CashFlowSpec(liability=AdaptedProcess(name="X", values=payload))
        out = value_multiprior(cf, RiskMeasureSpec(cfg.kind, cfg.q), family, grid, lattice)
        for theta in grid:
            density_process(family, theta, lattice)  # validated on construction
        supermartingale_diagnostic(out, cf, lattice)
        checks += 1
    _write(out_dir, "manifest.txt", cfg.to_manifest())
    print(f"validate: config ok, {checks} lattice self-checks passed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ambival",
        description="Valuation bounds for insurance run-offs under parameter ambiguity.",
    )
    parser.add_argument("--config", help="key-value config file")
    parser.add_argument("--command", choices=COMMANDS)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--n", type=int)
    parser.add_argument("--p", type=float)
    parser.add_argument("--q", type=float)
    parser.add_argument("--case", type=int, choices=(1, 2))
    parser.add_argument("--out", help="output directory (default: $AMBIVAL_OUT or '.')")
    parser.add_argument("--threads", type=int)
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        overrides: Dict[str, object] = {}
        for item in args.set:
            if "=" not in item:
                raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
            key, raw = item.split("=", 1)
            overrides[key.strip()] = raw.strip()
        for key in ("command", "seed", "n", "p", "q", "case", "out", "threads"):
            val = getattr(args, key)
            if val is not None:
                overrides[key] = val
        if "out" not in overrides and os.environ.get("AMBIVAL_OUT"):
            overrides["out"] = os.environ["AMBIVAL_OUT"]
        cfg = parse_config(args.config, overrides)
        out_dir = Path(cfg.out)
        dispatch = {
            "validate": _cmd_validate,
            "table1": _cmd_table1,
            "figure1": _cmd_figure1,
            "value": _cmd_value,
            "oracle-check": _cmd_oracle_check,
        }
        dispatch[cfg.command](cfg, out_dir)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
