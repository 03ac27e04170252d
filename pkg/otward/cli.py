"""Command-line entry point ``otward``.

Exit codes: 0 on success, 2 for usage, file and format errors, 3 for numeric errors.
Results go to stdout; logging and warnings go to stderr.

CSV schemas:
    diagnose      index, id, cost, rank
    score --indiv index, id, cost
    factorial     A, B, C, D, A_n, B_n, C_n, D_n, delta_cost, delta_meas, delta_syn, dominant
    check-theorem1, sweep, rank1: one row per grid cell, columns as printed by --help
"""

from __future__ import annotations

import argparse
from collections.abc import Callable
from collections.abc import Sequence
import json
import logging
from pathlib import Path
import sys
from typing import Any

import numpy as np

from otward import config
from otward.adapter import load_adapter
from otward.adapter import ResidualAdapter
from otward.adapter import save_adapter
from otward.diagnostics import diagnose
from otward.embedding_file import read_embeddings
from otward.embedding_file import write_embeddings
from otward.errors import OtwardError
from otward.harness.contamination import contaminate
from otward.harness.contamination import ContaminationKind
from otward.harness.contamination import ContaminationSpec
from otward.harness.contamination import dilution_factor
from otward.harness.contamination import rank1_sensitivity
from otward.harness.factorial import run_factorial
from otward.harness.sweeps import eps_sweep
from otward.harness.tables import read_table
from otward.harness.tables import write_manifest
from otward.harness.tables import write_table
from otward.harness.theory import check_theorem1
from otward.harness.theory import SpectrumSpec
from otward.linalg import Rng
from otward.linalg import sample_gaussian
from otward.metrics import BandwidthRule
from otward.metrics import fad
from otward.metrics import fit_moments
from otward.metrics import kad
from otward.metrics import KadConfig
from otward.probes import PROBE_KINDS
from otward.probes import ProbeConfig
from otward.probes import SyntheticProbes
from otward.scorer import OTAD
from otward.train import LossKind
from otward.train import train_adapter
from otward.train import TrainConfig
from otward.utils import format_scalar
from otward.utils import spearman
from otward.version import __version__


logger = logging.getLogger("otward")

METRICS = ("fad", "kad", "otad-raw", "otad-adapted")
EXIT_OK = 0
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad flag combination that argparse cannot express."""


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from err


def _emit_manifest(args: argparse.Namespace, seeds: Sequence[int] | None = None) -> None:
    if getattr(args, "manifest", None) is None:
        return
    run_config = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    write_manifest(args.manifest, args.command, run_config, seeds)


def _add_sinkhorn_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--epsilon",
        type=float,
        default=config.DEFAULT_EPS_REG,
        help="Sinkhorn regularisation, relative to the mean cross cost",
    )
    parser.add_argument(
        "--raw-epsilon",
        action="store_true",
        help="use --epsilon as an absolute value instead of a cost-relative one",
    )
    parser.add_argument("--max-iter", type=int, default=config.DEFAULT_MAX_ITER)
    parser.add_argument("--tol", type=float, default=config.DEFAULT_TOL)


def _scorer(args: argparse.Namespace, variant: str) -> OTAD:
    return OTAD(
        variant=variant,
        epsilon=args.epsilon,
        adapter=args.adapter,
        relative_eps=not args.raw_epsilon,
        max_iter=args.max_iter,
        tol=args.tol,
    )


def cmd_score(args: argparse.Namespace) -> int:
    ref, evaluated = read_embeddings(args.ref), read_embeddings(args.eval)
    info: dict[str, Any] = {"metric": args.metric}
    if args.indiv is not None and not args.metric.startswith("otad"):
        raise UsageError("--indiv is only available for the otad metrics")

    if args.metric == "fad":
        value = fad(fit_moments(ref), fit_moments(evaluated))
    elif args.metric == "kad":
        rule = BandwidthRule(args.bandwidth)
        if rule == BandwidthRule.FIXED and args.sigma is None:
            raise UsageError("--bandwidth fixed needs --sigma")
        value = kad(ref, evaluated, KadConfig(bandwidth_rule=rule, sigma=args.sigma))
        info["bandwidth"] = rule.value
    else:
        variant = args.metric.split("-", 1)[1]
        if variant == "adapted" and args.adapter is None:
            raise UsageError("otad-adapted needs --adapter")
        scorer = _scorer(args, variant)
        result = scorer.score_result(ref, evaluated)
        value = result.divergence
        info.update(
            epsilon=args.epsilon,
            relative_eps=not args.raw_epsilon,
            effective_eps=result.effective_eps,
            iterations=result.iterations,
            converged=result.converged,
        )
        if args.indiv is not None:
            costs = scorer.score_individual(ref, evaluated)
            ids = evaluated.ids()
            rows = [{"index": i, "id": ids[i], "cost": float(c)} for i, c in enumerate(costs)]
            write_table(rows, args.indiv)

    print(format_scalar(value))
    if args.json is not None:
        sidecar = {"value": value, "config": info, "version": __version__}
        Path(args.json).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    _emit_manifest(args)
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    ref, evaluated = read_embeddings(args.ref), read_embeddings(args.eval)
    if args.adapter is not None:
        report = _scorer(args, "adapted").diagnose(ref, evaluated, top_k=args.top_k)
    else:
        report = diagnose(
            ref,
            evaluated,
            eps_reg=args.epsilon,
            top_k=args.top_k,
            max_iter=args.max_iter,
            tol=args.tol,
            relative_eps=not args.raw_epsilon,
        )
    for rank, (sample_id, cost) in enumerate(report.top_k, start=1):
        print(f"{rank}\t{sample_id}\t{format_scalar(cost)}")
    if args.out is not None:
        write_table(report.to_rows(), args.out)
    if args.json is not None:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _emit_manifest(args)
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    spectrum = SpectrumSpec.parse(args.spectrum, d=args.d)
    rng = Rng(args.seed)
    points = sample_gaussian(rng, np.zeros(spectrum.d), spectrum.eigen(), args.n)
    write_embeddings(points, args.out)
    _emit_manifest(args, [args.seed])
    return EXIT_OK


def cmd_contaminate(args: argparse.Namespace) -> int:
    kind = ContaminationKind.parse(args.kind)
    spec = ContaminationSpec(
        kind=kind,
        epsilon=args.epsilon,
        noise_scale=args.noise_scale if kind == ContaminationKind.FULL_RANK else None,
        c0=args.c0 if kind == ContaminationKind.THEOREM_ONE else None,
    )
    contaminated, mask = contaminate(read_embeddings(args.input), spec, Rng(args.seed))
    write_embeddings(contaminated, args.out)
    if args.mask_out is not None:
        write_table([{"index": int(i)} for i in np.flatnonzero(mask)], args.mask_out)
    print(int(mask.sum()))
    _emit_manifest(args, [args.seed])
    return EXIT_OK


def cmd_factorial(args: argparse.Namespace) -> int:
    ref, evaluated = read_embeddings(args.ref), read_embeddings(args.eval)
    result = run_factorial(
        ref,
        evaluated,
        load_adapter(args.adapter),
        eps_reg=args.epsilon,
        max_iter=args.max_iter,
        tol=args.tol,
    )
    row = result.to_row()
    for key in ("delta_cost", "delta_meas", "delta_syn"):
        print(f"{key}\t{format_scalar(float(row[key]))}")
    print(f"dominant\t{row['dominant']}")
    if args.out is not None:
        write_table([row], args.out)
    _emit_manifest(args)
    return EXIT_OK


def cmd_check_theorem1(args: argparse.Namespace) -> int:
    spectrum = SpectrumSpec.parse(args.spectrum, d=args.d)
    report = check_theorem1(
        spectrum, args.epsilon, args.c0, args.n, args.seeds, seed=args.seed, workers=args.workers
    )
    row: dict[str, Any] = {
        "spectrum": spectrum.describe(),
        "d": spectrum.d,
        "epsilon": args.epsilon,
        "c0": args.c0,
    }
    row.update(report.to_row())
    for key, value in row.items():
        shown = format_scalar(value) if isinstance(value, float) else str(value).lower()
        print(f"{key}\t{shown}")
    if args.out is not None:
        write_table([row], args.out)
    _emit_manifest(args, [args.seed])
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    rows = eps_sweep(
        read_embeddings(args.ref),
        read_embeddings(args.eval),
        eps_grid=args.grid,
        max_iter=args.max_iter,
        tol=args.tol,
        relative_eps=not args.raw_epsilon,
    )
    for row in rows:
        print(
            f"{format_scalar(row['eps_reg'])}\t{format_scalar(row['divergence'])}"
            f"\t{row['iterations']}\t{str(row['converged']).lower()}"
        )
    if args.out is not None:
        write_table(rows, args.out)
    _emit_manifest(args)
    return EXIT_OK


def cmd_rank1(args: argparse.Namespace) -> int:
    rows = rank1_sensitivity(
        read_embeddings(args.input), args.grid, eps_reg=args.epsilon, rng=Rng(args.seed)
    )
    if args.out is not None:
        write_table(rows, args.out)
    try:
        print(format_scalar(dilution_factor(rows, epsilon=args.report_eps)))
    except KeyError:
        logger.warning("no rows at epsilon=%g; dilution factor not reported", args.report_eps)
    _emit_manifest(args, [args.seed])
    return EXIT_OK


def cmd_train_adapter(args: argparse.Namespace) -> int:
    probes = SyntheticProbes(ProbeConfig(d=args.d, kinds=tuple(args.kinds), seed=args.seed))
    if args.init is not None:
        init = load_adapter(args.init)
    else:
        init = ResidualAdapter.initialise(args.d, Rng(args.seed), dropout_rate=args.dropout)
    cfg = TrainConfig(
        learning_rate=args.lr,
        margin=args.margin,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        loss=LossKind(args.loss),
        eps_reg=args.epsilon,
        steps_per_epoch=args.steps_per_epoch,
    )
    losses: list[float] = []
    trained = train_adapter(
        init,
        probes,
        cfg,
        epoch_callback=lambda _, loss: losses.append(loss),
        progress_bar=args.progress,
    )
    out = Path(args.out)
    save_adapter(trained, out / config.ADAPTER_FILENAME if out.is_dir() else out)
    print(format_scalar(losses[-1] if losses else float("nan")))
    _emit_manifest(args, [args.seed])
    return EXIT_OK


def cmd_spearman(args: argparse.Namespace) -> int:
    rows = read_table(args.table)
    try:
        x = [float(row[args.x]) for row in rows]
        y = [float(row[args.y]) for row in rows]
    except KeyError as err:
        raise UsageError(f"column {err} not found in {args.table}") from err
    print(format_scalar(spearman(x, y)))
    _emit_manifest(args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otward",
        description="Optimal-transport distances and diagnostics for embedding sets.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, func: Callable[[argparse.Namespace], int], help: str) -> Any:
        p = sub.add_parser(name, help=help)
        p.add_argument("--manifest", type=Path, default=None, help="write a JSON run manifest")
        p.set_defaults(func=func)
        return p

    p = command("score", cmd_score, "distance between two embedding files")
    p.add_argument("ref", type=Path)
    p.add_argument("eval", type=Path)
    p.add_argument("--metric", choices=METRICS, default="otad-raw")
    p.add_argument("--adapter", type=Path, default=None, help="adapter file or directory")
    p.add_argument("--bandwidth", choices=[r.value for r in BandwidthRule], default="eval_median")
    p.add_argument("--sigma", type=float, default=None, help="bandwidth for --bandwidth fixed")
    p.add_argument("--json", type=Path, default=None, help="write a JSON sidecar")
    p.add_argument("--indiv", type=Path, default=None, help="per-sample cost CSV")
    _add_sinkhorn_options(p)

    p = command("diagnose", cmd_diagnose, "per-sample transport costs of the eval set")
    p.add_argument("ref", type=Path)
    p.add_argument("eval", type=Path)
    p.add_argument("--top-k", type=int, default=config.DEFAULT_TOP_K)
    p.add_argument("--out", type=Path, default=None, help="CSV: index, id, cost, rank")
    p.add_argument("--adapter", type=Path, default=None)
    p.add_argument("--json", type=Path, default=None)
    _add_sinkhorn_options(p)

    p = command("gen", cmd_gen, "sample a Gaussian embedding file")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--spectrum", default="flat:1.0", help="flat:K, spike:ratio or explicit:l1,..")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = command("contaminate", cmd_contaminate, "replace an epsilon-fraction of rows")
    p.add_argument("input", type=Path)
    p.add_argument("--kind", default="rank1", help="rank1, full_rank or theorem_one")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--c0", type=float, default=config.RANK1_AMPLITUDE)
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mask-out", type=Path, default=None, help="CSV of replaced row indices")

    p = command("factorial", cmd_factorial, "2x2 cost/coupling decomposition")
    p.add_argument("ref", type=Path)
    p.add_argument("eval", type=Path)
    p.add_argument("--adapter", type=Path, required=True)
    p.add_argument("--epsilon", type=float, default=config.DEFAULT_EPS_REG)
    p.add_argument("--max-iter", type=int, default=config.DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=config.DEFAULT_TOL)
    p.add_argument("--out", type=Path, default=None)

    p = command("check-theorem1", cmd_check_theorem1, "rank-1 contamination bound check")
    p.add_argument("--spectrum", default="flat:1.0")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--c0", type=float, default=8.0)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = command("sweep", cmd_sweep, "Sinkhorn divergence over an eps_reg grid")
    p.add_argument("ref", type=Path)
    p.add_argument("eval", type=Path)
    p.add_argument("--grid", type=_float_list, default=config.SWEEP_GRID)
    p.add_argument("--raw-epsilon", action="store_true")
    p.add_argument("--max-iter", type=int, default=config.DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=config.DEFAULT_TOL)
    p.add_argument("--out", type=Path, default=None)

    p = command("rank1", cmd_rank1, "self-normalised rank-1 sensitivity table")
    p.add_argument("input", type=Path)
    p.add_argument("--grid", type=_float_list, default=config.CONTAMINATION_GRID)
    p.add_argument("--epsilon", type=float, default=config.RANK1_REPORT_EPS)
    p.add_argument("--report-eps", type=float, default=config.RANK1_REPORT_EPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)

    p = command("train-adapter", cmd_train_adapter, "train an adapter on synthetic probes")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--loss", choices=[k.value for k in LossKind], default="triplet")
    p.add_argument("--init", type=Path, default=None, help="start from this adapter")
    p.add_argument("--kinds", nargs="+", choices=PROBE_KINDS, default=list(PROBE_KINDS))
    p.add_argument("--epochs", type=int, default=config.DEFAULT_EPOCHS)
    p.add_argument("--steps-per-epoch", type=int, default=config.DEFAULT_STEPS_PER_EPOCH)
    p.add_argument("--batch-size", type=int, default=config.DEFAULT_BATCH_SIZE)
    p.add_argument("--lr", type=float, default=config.DEFAULT_LEARNING_RATE)
    p.add_argument("--margin", type=float, default=config.DEFAULT_MARGIN)
    p.add_argument("--epsilon", type=float, default=config.DEFAULT_EPS_REG)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = command("spearman", cmd_spearman, "Spearman correlation of two CSV columns")
    p.add_argument("table", type=Path)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    config.apply_thread_limit()

    try:
        return int(args.func(args))
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"otward {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OtwardError as err:
        logger.error("%s: %s", type(err).__name__, err)
        return err.exit_code
    except (OSError, ValueError) as err:
        logger.error("%s", err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
