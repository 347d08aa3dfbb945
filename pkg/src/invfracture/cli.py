"""Command-line driver: ``trace``, ``stability``, ``family-check`` and ``inspect``.

Parameters come from an optional flat ``key = value`` file given with
``--config``; command-line flags override it.  Exit codes: 0 success,
1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__, assembly, cracks, postprocess, stability
from .activeset import SolverOptions
from .constitutive import ConstitutiveModel
from .continuation import ContinuationPlan, trace_all
from .errors import InvFractureError, WindowExceeded

log = logging.getLogger("invfracture")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Effective parameters of a run; every field can be set from the config file."""

    epsilon: float = 0.1
    model: str = "paper"
    lj_A: float = 1.0
    lj_m: float = 2.0
    lj_n: float = 1.0
    n_max: int = 6
    elements: int = 600
    lambda_start: float = 1.0
    lambda_end: float = 1.9
    step: float = 0.01
    tol: float = 1e-9
    zero_tol: float = 1e-8
    switch_amplitude: float = 1e-2
    snapshot_stride: int = 10
    out: str = "out"
    format: str = "csv"
    jobs: int = 1

    def __post_init__(self):
        if self.model not in ("paper", "lj"):
            raise ConfigError(f"model must be 'paper' or 'lj', got {self.model!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.jobs < 1 or self.snapshot_stride < 1:
            raise ConfigError("jobs and snapshot_stride must be at least 1")

    def constitutive(self) -> ConstitutiveModel:
        if self.model == "lj":
            return ConstitutiveModel.general_lj(self.lj_A, self.lj_m, self.lj_n)
        return ConstitutiveModel.paper_example()

    def plan(self) -> ContinuationPlan:
        return ContinuationPlan(
            epsilon=self.epsilon,
            lambda_start=self.lambda_start,
            lambda_end=self.lambda_end,
            step=self.step,
            n_max=self.n_max,
            elements_total=self.elements,
            switch_amplitude=self.switch_amplitude,
            model=self.constitutive(),
            options=SolverOptions(tol_abs=self.tol, tol_rel=self.tol),
            zero_tol=self.zero_tol,
        )

    def echo(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {v!r}\n" if isinstance(v, float) else f"{f.name} = {v}\n")
        return "".join(lines)


def _convert(name: str, text: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r}") from exc
    return text


def read_config(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        cfg = RunConfig(**values)
        cfg.plan()  # surfaces plan-level validation as a config error
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# -- commands --------------------------------------------------------------------
def _row(rec, smp) -> postprocess.DiagramRow:
    return postprocess.DiagramRow(
        rec.branch, rec.side, float(smp.lam), float(smp.energy), float(smp.stress_mean), float(smp.stress_dev),
        smp.verdict, int(smp.P), int(smp.n_crack_faces), int(smp.n_material_cracks),
    )


def _snapshot_samples(rec, plan: ContinuationPlan, stride: int) -> list:
    """Samples on every ``stride``-th grid load plus the last one.

    Where the unbroken and the broken branch share a load only the broken
    state is kept, so file names stay unique.
    """
    last = plan.grid()[-1]
    picked = {}
    for smp in rec.samples:
        k = round((smp.lam - plan.lambda_start) / plan.step, 6)
        on_grid = k == int(k)
        if on_grid and (int(k) % stride == 0 or smp.lam == last):
            if smp.lam not in picked or smp.broken:
                picked[smp.lam] = smp
    return [picked[lam] for lam in sorted(picked)]


def run_trace(cfg: RunConfig) -> tuple:
    """Trace every branch and write the outputs; returns ``(bifurcations, records)``."""
    plan = cfg.plan()
    bif, records = trace_all(plan, jobs=cfg.jobs)
    for b in bif:
        log.info("bifurcation %d at lambda = %.6f", b.mode, b.lam)
    rows, snaps = [], []
    for rec in records:
        for smp in rec.samples:
            rows.append(_row(rec, smp))
        for smp in _snapshot_samples(rec, plan, cfg.snapshot_stride):
            st = smp.state
            st.branch, st.side = rec.branch, rec.side
            topo = cracks.crack_topology(st, allow_degenerate=True)
            snaps.append(postprocess.SolutionSnapshot.from_state(st, topo))
    paths = postprocess.write_records(rows, snaps, cfg.out, cfg.format)
    postprocess._write(os.path.join(cfg.out, "run_config"), cfg.echo())
    bif_rows = [{"n": i + 1, "lambda": b.lam, "mode": b.mode} for i, b in enumerate(bif)]
    postprocess._write(os.path.join(cfg.out, "bifurcations.json"), json.dumps(bif_rows, indent=1) + "\n")
    log.info("%d branch records, %d rows, %d snapshots -> %s", len(records), len(rows), len(snaps), paths[0])
    return bif, records


def cmd_trace(cfg: RunConfig) -> int:
    _, records = run_trace(cfg)
    print(f"{len(records)} branch records written to {cfg.out}")
    return EXIT_OK


def _load(path: str, cfg: RunConfig):
    snap = postprocess.read_snapshot(path)
    state = snap.to_state()
    prob = assembly.ScaledProblem(cfg.epsilon, state.lam, cfg.constitutive(), state.mesh)
    return snap, state, prob


def cmd_stability(cfg: RunConfig, path: str, head: int = 10) -> int:
    _, state, prob = _load(path, cfg)
    topo = cracks.crack_topology(state, allow_degenerate=True)
    report = stability.assess(prob, state, topo, zero_tol=cfg.zero_tol)
    out = {"lambda": state.lam, "branch": state.branch, "side": state.side}
    out.update(report.as_dict(head))
    out["translation_residual"] = stability.translation_mode_check(prob, state, topo)
    print(json.dumps(out, indent=1))
    return EXIT_OK


def cmd_family_check(cfg: RunConfig, path: str, region: int, theta: float) -> int:
    _, state, prob = _load(path, cfg)
    topo = cracks.crack_topology(state, allow_degenerate=True)
    moved = cracks.translate_family(state, region, theta, topo, problem=prob)
    E0 = assembly.energy(prob, state.field)
    E1 = assembly.energy(prob, moved.field)
    out = {
        "region": region,
        "theta": theta,
        "shift_elements": int(round(theta / (state.lam * state.mesh.h))),
        "energy_delta": E1 - E0,
        "residual": cracks.family_residual(prob, moved),
        "base_residual": cracks.family_residual(prob, state),
    }
    print(json.dumps(out, indent=1))
    return EXIT_OK


def cmd_inspect(path: str, every: int = 1) -> int:
    snap = postprocess.read_snapshot(path)
    print(f"# branch {snap.branch}{snap.side} lambda {snap.lam!r} nodes {len(snap.s)}")
    for key in ("broken_intervals", "material_crack_set"):
        print(f"# {key}: {snap.topology.get(key, [])}")
    cols = ("s", "y", "u", "du", "h", "H", "mu")
    print(" ".join(f"{c:>14}" for c in cols))
    table = np.column_stack([getattr(snap, c) for c in cols])
    for row in table[::every]:
        print(" ".join(f"{v:14.6e}" for v in row))
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------
def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--n-max", dest="n_max", type=int)
    common.add_argument("--elements", type=int, help="elements on [0, 1]; branch n uses elements/n per cell")
    common.add_argument("--lambda-start", dest="lambda_start", type=float)
    common.add_argument("--lambda-end", dest="lambda_end", type=float)
    common.add_argument("--step", type=float)
    common.add_argument("--tol", type=float, help="absolute and relative Newton tolerance")
    common.add_argument("--out")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--jobs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="invfracture", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("trace", parents=[common], help="trace all branches and write the diagram")
    st = sub.add_parser("stability", parents=[common], help="stability report of a snapshot as JSON")
    st.add_argument("snapshot")
    st.add_argument("--head", type=int, default=10, help="number of eigenvalues to print")
    fc = sub.add_parser("family-check", parents=[common], help="translate a floating region of a snapshot")
    fc.add_argument("snapshot")
    fc.add_argument("--region", type=int, default=0)
    fc.add_argument("--theta", type=float, required=True, help="shift in deformed length")
    ins = sub.add_parser("inspect", parents=[common], help="print a snapshot as a table")
    ins.add_argument("snapshot")
    ins.add_argument("--every", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "trace":
            return cmd_trace(cfg)
        if args.command == "stability":
            return cmd_stability(cfg, args.snapshot, args.head)
        if args.command == "family-check":
            return cmd_family_check(cfg, args.snapshot, args.region, args.theta)
        return cmd_inspect(args.snapshot, max(1, args.every))
    except ConfigError as exc:
        print(f"invfracture: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WindowExceeded as exc:
        print(f"invfracture: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IndexError as exc:
        # no such floating region
        print(f"invfracture: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvFractureError as exc:
        print(f"invfracture: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"invfracture: cannot use input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
