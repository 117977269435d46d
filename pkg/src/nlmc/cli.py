"""Command-line front end: simulate, sample, search, certify, reproduce figures.

Exit codes: 0 for success (including CERTIFIED verdicts), 2 when a
certificate comes back INCONCLUSIVE or REFUTED, 1 for any error.  Given
the same arguments (including seed), every run writes byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .certify import FD_STEP, certify_ergodic_2, certify_ergodic_3, certify_unique
from .errors import NlmcError
from .generator import CORPUS_NAMES, CORPUS_SUMMARY, GeneratorSpec, corpus, load_generator
from .semigroup import MAX_HORIZON, IntegratorControls, evolve, sample_path
from .simplex import SimplexGrid
from .stationary import find_invariant

MAX_GRID_RESOLUTION = 200
MAX_SCAN_RESOLUTION = 1_000_000

_DEFAULT_OUT = {
    "simulate": "trajectory.csv",
    "sample": "jump_path.csv",
    "invariant": "stationary_set.json",
    "certify-unique": "certificate_unique.json",
    "certify-ergodic": "certificate_ergodic.json",
}

_FIG2_STARTS = (0.05, 0.2, 0.3, 0.45, 0.55, 0.6, 0.7, 0.9)
_FIG2_HORIZON = 50.0
_FIG2_LIMITS = (0.25, 0.75)


@dataclass(frozen=True)
class RunConfig:
    """Validated bundle of one CLI invocation."""

    command: str
    corpus_name: str | None = None
    corpus_params: dict = field(default_factory=dict)
    generator_file: str | None = None
    m0: tuple[float, ...] | None = None
    horizon: float | None = None
    rtol: float = 1e-8
    atol: float = 1e-10
    sample_every: float | None = None
    grid_resolution: int = 40
    scan_resolution: int = 10_000
    fd_step: float = FD_STEP
    seed: int = 0
    initial_state: int | None = None
    out: str | None = None
    outdir: str = "."
    figure: str | None = None

    def __post_init__(self) -> None:
        commands = (
            "simulate",
            "sample",
            "invariant",
            "certify-unique",
            "certify-ergodic",
            "corpus-list",
            "reproduce",
        )
        if self.command not in commands:
            raise ValueError(f"unknown command {self.command!r}")
        needs_generator = self.command in (
            "simulate",
            "sample",
            "invariant",
            "certify-unique",
            "certify-ergodic",
        )
        sources = (self.corpus_name is not None) + (self.generator_file is not None)
        if needs_generator and sources != 1:
            raise ValueError("exactly one of --corpus or --generator-file is required")
        if not needs_generator and sources:
            raise ValueError(f"{self.command} takes no generator source")
        if self.command in ("simulate", "sample"):
            if self.m0 is None:
                raise ValueError(f"{self.command} requires --m0")
            if self.horizon is None:
                raise ValueError(f"{self.command} requires --horizon")
        if self.horizon is not None and not (0.0 < self.horizon <= MAX_HORIZON):
            raise ValueError(f"horizon must lie in (0, {MAX_HORIZON:g}]")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.sample_every is not None and self.sample_every <= 0:
            raise ValueError("sample-every must be positive")
        if not (1 <= self.grid_resolution <= MAX_GRID_RESOLUTION):
            raise ValueError(f"grid resolution must lie in 1..{MAX_GRID_RESOLUTION}")
        if not (10 <= self.scan_resolution <= MAX_SCAN_RESOLUTION):
            raise ValueError(f"scan resolution must lie in 10..{MAX_SCAN_RESOLUTION}")
        if not (0.0 < self.fd_step <= 1e-2):
            raise ValueError("fd-step must lie in (0, 0.01]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.command == "reproduce" and self.figure not in ("fig1", "fig2"):
            raise ValueError("reproduce requires a figure: fig1 or fig2")


def _load_spec(config: RunConfig) -> GeneratorSpec:
    if config.generator_file is not None:
        return load_generator(config.generator_file)
    return corpus(config.corpus_name, config.corpus_params)


def _check_m0(spec: GeneratorSpec, m0: tuple[float, ...]) -> tuple[float, ...]:
    if len(m0) != spec.dimension:
        raise ValueError(
            f"--m0 has {len(m0)} entries but the generator has {spec.dimension} states"
        )
    return m0


def _out_path(config: RunConfig) -> str:
    return config.out or _DEFAULT_OUT[config.command]


def run(config: RunConfig) -> int:
    """Execute one validated CLI invocation; returns the process exit code."""
    if config.command == "corpus-list":
        for name in CORPUS_NAMES:
            print(f"{name}: {CORPUS_SUMMARY[name]}")
        return 0
    if config.command == "reproduce":
        for path in reproduce(config.figure, config.outdir):
            print(f"wrote {path}")
        return 0

    spec = _load_spec(config)
    controls = IntegratorControls(
        rtol=config.rtol, atol=config.atol, sample_every=config.sample_every
    )
    out = _out_path(config)

    if config.command == "simulate":
        m0 = _check_m0(spec, config.m0)
        trajectory = evolve(spec, m0, config.horizon, controls)
        trajectory.to_csv(out)
        final = ", ".join(f"{x:.12g}" for x in trajectory.final.probs)
        print(f"wrote {out} ({len(trajectory)} samples)")
        print(f"final state: ({final})")
        return 0

    if config.command == "sample":
        m0 = _check_m0(spec, config.m0)
        path = sample_path(
            spec,
            m0,
            initial_state=config.initial_state,
            horizon=config.horizon,
            seed=config.seed,
            controls=controls,
        )
        path.to_csv(out)
        print(f"wrote {out} ({path.jump_count} jumps, seed {config.seed})")
        return 0

    if config.command == "invariant":
        grid = SimplexGrid(spec.dimension, config.grid_resolution)
        found = find_invariant(spec, grid)
        found.to_json(out)
        for result in found:
            point = ", ".join(f"{x:.12g}" for x in result.point.probs)
            print(
                f"({point})  residual={result.residual:.3e}  {result.classification}"
            )
        print(
            f"wrote {out} ({len(found)} invariant distribution(s) from "
            f"{found.seed_count} seeds)"
        )
        return 0

    if config.command == "certify-unique":
        grid = SimplexGrid(spec.dimension, config.grid_resolution)
        certificate = certify_unique(spec, grid, config.fd_step)
    elif config.command == "certify-ergodic":
        if spec.dimension == 2:
            certificate = certify_ergodic_2(spec, config.scan_resolution)
        elif spec.dimension == 3:
            certificate = certify_ergodic_3(
                spec, SimplexGrid(3, config.grid_resolution), config.fd_step
            )
        else:
            raise ValueError(
                f"ergodicity certificates support 2 or 3 states, not {spec.dimension}"
            )
    else:
        raise ValueError(f"unknown command {config.command!r}")

    certificate.to_json(out)
    print(f"verdict: {certificate.verdict}")
    print(f"reason: {certificate.reason}")
    if "margin" in certificate.evidence:
        print(f"margin: {certificate.evidence['margin']:.6e}")
    print(f"wrote {out}")
    return 0 if certificate.certified else 2


def reproduce(figure: str, outdir: str = ".") -> list[str]:
    """Regenerate the trajectory artifacts behind the two reference figures.

    ``fig1`` is the oscillating three-state flow from (0.2, 0.4, 0.4) over
    two periods; ``fig2`` is the two-state bistable flow from eight starting
    points over horizon 50, with a JSON summary of the limit each one
    reaches.
    """
    os.makedirs(outdir, exist_ok=True)
    written = []
    if figure == "fig1":
        spec = corpus("oscillator")
        trajectory = evolve(spec, (0.2, 0.4, 0.4), 4.0 * math.pi)
        path = os.path.join(outdir, "fig1.csv")
        trajectory.to_csv(path)
        written.append(path)
        return written
    if figure == "fig2":
        spec = corpus("bistable")
        runs = []
        for start in _FIG2_STARTS:
            trajectory = evolve(spec, (start, 1.0 - start), _FIG2_HORIZON)
            path = os.path.join(outdir, f"fig2_{start:g}.csv")
            trajectory.to_csv(path)
            written.append(path)
            final = float(trajectory.final.probs[0])
            limit = min(_FIG2_LIMITS, key=lambda target: abs(final - target))
            runs.append({"start": start, "final_m1": final, "limit": limit})
        summary = os.path.join(outdir, "fig2_summary.json")
        with open(summary, "w", encoding="utf-8") as handle:
            handle.write(
                json.dumps({"horizon": _FIG2_HORIZON, "runs": runs}, indent=2, sort_keys=True)
                + "\n"
            )
        written.append(summary)
        return written
    raise ValueError(f"unknown figure {figure!r}; choose fig1 or fig2")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit 1 (2 is reserved for verdicts)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_m0(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--m0 must be comma-separated numbers, got {text!r}")
    if len(values) < 2:
        raise argparse.ArgumentTypeError("--m0 needs at least two entries")
    return values


def _parse_initial_state(text: str):
    if text == "draw":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--initial-state must be a 1-based state index or 'draw', got {text!r}"
        )
    if value < 1:
        raise argparse.ArgumentTypeError("--initial-state indices start at 1")
    return value - 1


def _add_generator_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--corpus", choices=CORPUS_NAMES, help="built-in generator name")
    group.add_argument("--generator-file", help="path to a generator JSON file")
    parser.add_argument("--b", type=float, help="consumer: browse-to-hold rate")
    parser.add_argument("--e", type=float, help="consumer: crowd pressure coefficient")
    parser.add_argument("--eps", type=float, help="consumer: baseline purchase rate")
    parser.add_argument("--lambda", dest="lam", type=float, help="consumer: restart rate")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="nlmc",
        description=(
            "Analyze continuous-time nonlinear Markov chains on finite state "
            "spaces: integrate marginal flows, sample jump paths, locate "
            "invariant distributions, and emit numerical certificates."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate the marginal flow and export CSV")
    _add_generator_flags(p)
    p.add_argument("--m0", type=_parse_m0, required=True, help="initial distribution, comma-separated")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--rtol", type=float, default=1e-8)
    p.add_argument("--atol", type=float, default=1e-10)
    p.add_argument("--sample-every", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("sample", help="sample one jump path and export CSV")
    _add_generator_flags(p)
    p.add_argument("--m0", type=_parse_m0, required=True)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--initial-state",
        type=_parse_initial_state,
        default=None,
        help="1-based starting state, or 'draw' to sample it from m0 (default)",
    )
    p.add_argument("--out", default=None)

    p = sub.add_parser("invariant", help="search for invariant distributions")
    _add_generator_flags(p)
    p.add_argument("--grid", type=int, default=20, dest="grid_resolution")
    p.add_argument("--out", default=None)

    p = sub.add_parser("certify-unique", help="certify uniqueness of the invariant distribution")
    _add_generator_flags(p)
    p.add_argument("--grid", type=int, default=40, dest="grid_resolution")
    p.add_argument("--fd-step", type=float, default=FD_STEP)
    p.add_argument("--out", default=None)

    p = sub.add_parser("certify-ergodic", help="certify strong ergodicity (2 or 3 states)")
    _add_generator_flags(p)
    p.add_argument("--grid", type=int, default=40, dest="grid_resolution")
    p.add_argument("--scan", type=int, default=10_000, dest="scan_resolution")
    p.add_argument("--fd-step", type=float, default=FD_STEP)
    p.add_argument("--out", default=None)

    sub.add_parser("corpus-list", help="list built-in generators")

    p = sub.add_parser("reproduce", help="regenerate reference-figure artifacts")
    p.add_argument("figure", choices=("fig1", "fig2"))
    p.add_argument("--outdir", default=".")

    return parser


def _config_from(args: argparse.Namespace) -> RunConfig:
    params = {}
    for key in ("b", "e", "eps", "lam"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if params and getattr(args, "corpus", None) is None:
        raise ValueError("corpus parameters require --corpus")
    fields = {
        "command": args.command,
        "corpus_name": getattr(args, "corpus", None),
        "corpus_params": params,
        "generator_file": getattr(args, "generator_file", None),
    }
    for name in (
        "m0",
        "horizon",
        "rtol",
        "atol",
        "sample_every",
        "grid_resolution",
        "scan_resolution",
        "fd_step",
        "seed",
        "initial_state",
        "out",
        "outdir",
        "figure",
    ):
        if hasattr(args, name) and getattr(args, name) is not None:
            fields[name] = getattr(args, name)
    return RunConfig(**fields)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    try:
        config = _config_from(args)
        return run(config)
    except (NlmcError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
