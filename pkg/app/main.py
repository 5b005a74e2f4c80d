# app/main.py
"""Command-line entry point: compare volumes, sweep thresholds, generate synthetic data."""

import argparse
import asyncio
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv

# Load environment variables from .env file BEFORE reading defaults
load_dotenv(Path(__file__).parent / ".env")

# pylint: disable=wrong-import-position
import numpy as np  # noqa: E402
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator  # noqa: E402

from app.ted.errors import TedError  # noqa: E402
from app.ted.experiments import (  # noqa: E402
    compare_modifications,
    sweep_thresholds,
    write_modifications_csv,
    write_sweep_csv,
)
from app.ted.ilp import SolverLimits  # noqa: E402
from app.ted.metrics import BaselineScores, ErrorTag, TedOptions, TedReport, ted  # noqa: E402
from app.ted.synth import (  # noqa: E402
    ModificationSpec,
    apply_modification,
    make_boundary_shift_1d,
    make_ground_truth,
)
from app.ted.tolerance import ToleranceConfig  # noqa: E402
from app.ted.volume import (  # noqa: E402
    SEGV1,
    LabelVolume,
    guess_format,
    load_volume,
    save_volume,
)

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = float(os.getenv("TED_ALPHA", "1.0"))
DEFAULT_BETA = float(os.getenv("TED_BETA", "1.0"))
DEFAULT_MAX_NODES = int(os.getenv("TED_MAX_NODES", "2000000"))
DEFAULT_MAX_SECONDS = float(os.getenv("TED_MAX_SECONDS", "60"))
LOG_LEVEL = os.getenv("TED_LOG_LEVEL", "INFO")

REPORT_SCHEMA = "ted-report/1"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT_ERROR = 2
EXIT_LIMIT_HIT = 3

_INPUT_ERRORS = (TedError, OSError, ValidationError, ValueError)


class RunConfig(BaseModel):
    """Inputs, tolerance, weights, limits and outputs of one CLI run."""

    model_config = ConfigDict(frozen=True)

    gt: Path | None = None
    proposal: Path | None = None
    format: str | None = None
    resolution: tuple[float, float, float] | None = None
    threshold_nm: float = Field(0.0, ge=0, allow_inf_nan=False)
    alpha: float = Field(DEFAULT_ALPHA, ge=0)
    beta: float = Field(DEFAULT_BETA, ge=0)
    background: int | None = Field(None, ge=0)
    max_nodes: int | None = Field(DEFAULT_MAX_NODES, ge=1)
    max_seconds: float | None = Field(DEFAULT_MAX_SECONDS, gt=0)
    report: Path | None = None
    relabeled_out: Path | None = None
    errors_out: Path | None = None
    sweep_out: Path = Path("sweep.csv")
    seed: int = Field(0, ge=0)

    @field_validator("resolution")
    @classmethod
    def _positive_resolution(cls, value):
        if value is not None and not all(r > 0 for r in value):
            raise ValueError(f"resolution must be positive, got {value}")
        return value

    def ted_options(self) -> TedOptions:
        return TedOptions(
            tolerance=ToleranceConfig(threshold=self.threshold_nm),
            alpha=self.alpha,
            beta=self.beta,
            limits=SolverLimits(max_nodes=self.max_nodes, max_seconds=self.max_seconds),
        )


class SynthRequest(BaseModel):
    """What ``ted synth`` should generate and where to put it."""

    model_config = ConfigDict(frozen=True)

    generator: Literal["boundary-1d", "voronoi"] = "voronoi"
    kind: Literal["shift", "split", "merge"] | None = None
    magnitude: float | None = None
    seed: int = Field(0, ge=0)
    base: Path | None = None
    format: str | None = None
    length: int = Field(200, ge=4)
    shift_nm: float = Field(0.0, ge=0)
    dims: tuple[int, int, int] = (64, 64, 1)
    objects: int = Field(8, ge=1)
    resolution: tuple[float, float, float] = (1.0, 1.0, 1.0)
    out_dir: Path = Path(".")


# --- Report document ---


class VoiEntry(BaseModel):
    split: float
    merge: float
    total: float


class BaselineEntry(BaseModel):
    rand_index: float | None
    voi: VoiEntry
    raw_splits: int
    raw_merges: int


class SplitEntry(BaseModel):
    gt_label: int
    fragments: list[int]


class MergeEntry(BaseModel):
    prop_label: int
    gt_labels: list[int]


class SolverEntry(BaseModel):
    optimal: bool
    gap: float
    nodes: int


class RelabeledEntry(BaseModel):
    dims: tuple[int, int, int]
    changed_locations: int
    path: str | None = None


class TimingEntry(BaseModel):
    generated_at: str
    wall_seconds: float


class ReportDocument(BaseModel):
    """JSON report; everything but ``timing`` is deterministic for equal inputs."""

    model_config = ConfigDict(populate_by_name=True)

    schema_: str = Field(REPORT_SCHEMA, alias="schema")
    config_echo: dict = Field(alias="config")
    ted_value: float
    splits: int
    merges: int
    split_pairs: list[SplitEntry]
    merge_pairs: list[MergeEntry]
    error_locations: dict[str, list[int]]
    relabeled: RelabeledEntry
    baseline: BaselineEntry
    relabeled_baseline: BaselineEntry
    solver: SolverEntry
    regions: int
    masked_locations: int
    background_masked: bool
    timing: TimingEntry


def build_report_document(
    config: RunConfig, report: TedReport, proposal: LabelVolume
) -> ReportDocument:
    tags = report.error_locations.reshape(-1)
    error_locations = {
        tag.name.lower(): np.flatnonzero(tags == tag).tolist()
        for tag in (ErrorTag.SPLIT, ErrorTag.MERGE, ErrorTag.BOTH)
    }
    changed = int((report.relabeled.flat != proposal.flat).sum())
    return ReportDocument(
        config=config.model_dump(mode="json"),
        ted_value=report.ted_value,
        splits=report.splits,
        merges=report.merges,
        split_pairs=[SplitEntry(gt_label=k, fragments=list(ls)) for k, ls in report.split_pairs],
        merge_pairs=[MergeEntry(prop_label=l, gt_labels=list(ks)) for l, ks in report.merge_pairs],
        error_locations=error_locations,
        relabeled=RelabeledEntry(
            dims=report.relabeled.dims,
            changed_locations=changed,
            path=str(config.relabeled_out) if config.relabeled_out else None,
        ),
        baseline=_baseline_entry(report.baseline),
        relabeled_baseline=_baseline_entry(report.relabeled_baseline),
        solver=SolverEntry(
            optimal=report.solver.optimal, gap=report.solver.gap, nodes=report.solver.nodes
        ),
        regions=report.regions,
        masked_locations=report.masked_locations,
        background_masked=report.background_masked,
        timing=TimingEntry(
            generated_at=datetime.now(timezone.utc).isoformat(),
            wall_seconds=report.solver.seconds,
        ),
    )


# --- Commands ---


def cmd_compare(config: RunConfig) -> int:
    """Scores the proposal against the ground truth and writes the JSON report."""
    try:
        x, y = _load_pair(config)
        report = ted(x, y, config.ted_options())
        document = build_report_document(config, report, y)
        text = document.model_dump_json(indent=2, exclude_none=True, by_alias=True)
        if config.report is None:
            print(text)
        else:
            config.report.write_text(text + "\n", encoding="utf-8")
        if config.relabeled_out is not None:
            save_volume(report.relabeled, config.relabeled_out, SEGV1)
        if config.errors_out is not None:
            tags = y.with_labels(report.error_locations).with_background(None)
            save_volume(tags, config.errors_out, SEGV1)
    except _INPUT_ERRORS as e:
        logger.error("compare failed: %s", e)
        return EXIT_INPUT_ERROR

    logger.info(
        "TED value %g (splits=%d, merges=%d)", report.ted_value, report.splits, report.merges
    )
    if not report.solver.optimal:
        logger.warning(
            "Solver limit hit; reported value is an upper bound (gap %g)", report.solver.gap
        )
        return EXIT_LIMIT_HIT
    return EXIT_OK


def cmd_sweep(config: RunConfig, thresholds: list[float]) -> int:
    """Writes one CSV row per threshold, ascending."""
    try:
        x, y = _load_pair(config)
        rows = asyncio.run(sweep_thresholds(x, y, thresholds, config.ted_options()))
        write_sweep_csv(rows, config.sweep_out)
    except _INPUT_ERRORS as e:
        logger.error("sweep failed: %s", e)
        return EXIT_INPUT_ERROR

    logger.info("Wrote %d sweep rows to %s", len(rows), config.sweep_out)
    return EXIT_OK if all(row.optimal for row in rows) else EXIT_LIMIT_HIT


def cmd_synth(request: SynthRequest) -> int:
    """Writes gt.segv1 and proposal.segv1 into the output directory."""
    try:
        if request.generator == "boundary-1d" and request.base is None:
            gt, proposal = make_boundary_shift_1d(
                request.length, request.resolution[0], request.shift_nm
            )
        else:
            if request.kind is None or request.magnitude is None:
                raise ValueError("--kind and --magnitude are required for modifications")
            if request.base is not None:
                gt = load_volume(
                    request.base,
                    request.format or guess_format(request.base),
                    resolution=request.resolution,
                )
            else:
                gt = make_ground_truth(
                    request.dims, request.objects, request.seed, request.resolution
                )
            spec = ModificationSpec(
                kind=request.kind, magnitude=request.magnitude, seed=request.seed
            )
            proposal = apply_modification(gt, spec)

        request.out_dir.mkdir(parents=True, exist_ok=True)
        save_volume(gt, request.out_dir / "gt.segv1", SEGV1)
        save_volume(proposal, request.out_dir / "proposal.segv1", SEGV1)
    except _INPUT_ERRORS as e:
        logger.error("synth failed: %s", e)
        return EXIT_INPUT_ERROR

    logger.info("Wrote %s/{gt,proposal}.segv1 (seed=%d)", request.out_dir, request.seed)
    return EXIT_OK


def cmd_experiment(
    dims: tuple[int, int, int],
    objects: int,
    shift_nm: float,
    count: int,
    config: RunConfig,
    out: Path,
) -> int:
    """Shift / split / merge comparison on a generated ground truth, as CSV."""
    try:
        gt = make_ground_truth(dims, objects, config.seed, config.resolution or (1.0, 1.0, 1.0))
        rows = compare_modifications(
            gt,
            shift_nm=shift_nm,
            count=count,
            threshold_nm=config.threshold_nm,
            seed=config.seed,
            options=config.ted_options(),
        )
        write_modifications_csv(rows, out)
    except _INPUT_ERRORS as e:
        logger.error("experiment failed: %s", e)
        return EXIT_INPUT_ERROR
    logger.info("Wrote modification comparison to %s", out)
    return EXIT_OK


# --- Argument parsing ---


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _triple(cast):
    def parse(text: str):
        values = [cast(v) for v in text.split(",")]
        if len(values) != 3:
            raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
        return tuple(values)

    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--gt", type=Path, help="ground truth volume")
    common.add_argument("--proposal", type=Path, help="proposal volume")
    common.add_argument("--format", choices=["segv1", "text"], help="input format (default: by suffix)")
    common.add_argument("--resolution", type=_triple(float), help="rx,ry,rz in nm per voxel")
    common.add_argument("--threshold-nm", type=float, default=0.0, help="allowed boundary shift")
    common.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="cost of one split")
    common.add_argument("--beta", type=float, default=DEFAULT_BETA, help="cost of one merge")
    common.add_argument("--background", type=int, help="ground truth label to leave unevaluated")
    common.add_argument("--max-nodes", type=int, default=DEFAULT_MAX_NODES)
    common.add_argument("--max-seconds", type=float, default=DEFAULT_MAX_SECONDS)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--log-level", default=LOG_LEVEL)

    parser = argparse.ArgumentParser(prog="ted", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    compare = commands.add_parser("compare", parents=[common], help="score a proposal")
    compare.add_argument("--report", type=Path, help="JSON report path (default: stdout)")
    compare.add_argument("--relabeled-out", type=Path, help="segv1 path for the relabeled proposal")
    compare.add_argument("--errors-out", type=Path, help="segv1 path for the error tag volume")

    sweep = commands.add_parser("sweep", parents=[common], help="TED over several thresholds")
    sweep.add_argument("--sweep", type=_floats, required=True, help="t1,t2,... in nm")
    sweep.add_argument("--sweep-out", type=Path, default=Path("sweep.csv"))

    synth = commands.add_parser("synth", help="generate a ground truth / proposal pair")
    synth.add_argument("--generator", choices=["boundary-1d", "voronoi"], default="voronoi")
    synth.add_argument("--kind", choices=["shift", "split", "merge"])
    synth.add_argument("--magnitude", type=float, help="shift in nm, or number of splits/merges")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--base", type=Path, help="modify this volume instead of a generated one")
    synth.add_argument("--format", choices=["segv1", "text"])
    synth.add_argument("--length", type=int, default=200)
    synth.add_argument("--shift-nm", type=float, default=0.0)
    synth.add_argument("--dims", type=_triple(int), default=(64, 64, 1))
    synth.add_argument("--objects", type=int, default=8)
    synth.add_argument("--resolution", type=_triple(float), default=(1.0, 1.0, 1.0))
    synth.add_argument("--out-dir", type=Path, default=Path("."))
    synth.add_argument("--log-level", default=LOG_LEVEL)

    experiment = commands.add_parser(
        "experiment", parents=[common], help="compare TED, RI and VOI under modifications"
    )
    experiment.add_argument("--dims", type=_triple(int), default=(64, 64, 1))
    experiment.add_argument("--objects", type=int, default=16)
    experiment.add_argument("--shift-nm", type=float, default=2.0)
    experiment.add_argument("--count", type=int, default=10)
    experiment.add_argument("--out", type=Path, default=Path("modifications.csv"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        if args.command == "synth":
            request = SynthRequest(
                generator=args.generator,
                kind=args.kind,
                magnitude=args.magnitude,
                seed=args.seed,
                base=args.base,
                format=args.format,
                length=args.length,
                shift_nm=args.shift_nm,
                dims=args.dims,
                objects=args.objects,
                resolution=args.resolution,
                out_dir=args.out_dir,
            )
            return cmd_synth(request)

        config = RunConfig(
            gt=args.gt,
            proposal=args.proposal,
            format=args.format,
            resolution=args.resolution,
            threshold_nm=args.threshold_nm,
            alpha=args.alpha,
            beta=args.beta,
            background=args.background,
            max_nodes=args.max_nodes,
            max_seconds=args.max_seconds,
            report=getattr(args, "report", None),
            relabeled_out=getattr(args, "relabeled_out", None),
            errors_out=getattr(args, "errors_out", None),
            sweep_out=getattr(args, "sweep_out", Path("sweep.csv")),
            seed=args.seed,
        )
    except ValidationError as e:
        logger.error("invalid arguments: %s", e)
        return EXIT_INPUT_ERROR

    try:
        if args.command == "compare":
            return cmd_compare(config)
        if args.command == "sweep":
            return cmd_sweep(config, args.sweep)
        return cmd_experiment(
            args.dims, args.objects, args.shift_nm, args.count, config, args.out
        )
    except Exception as e:
        logger.exception("Unexpected error: %s", e)
        return EXIT_FAILURE


def _load_pair(config: RunConfig) -> tuple[LabelVolume, LabelVolume]:
    if config.gt is None or config.proposal is None:
        raise ValueError("--gt and --proposal are required")
    resolution = config.resolution or (1.0, 1.0, 1.0)
    x = load_volume(config.gt, config.format or guess_format(config.gt), resolution=resolution)
    y = load_volume(
        config.proposal, config.format or guess_format(config.proposal), resolution=resolution
    )
    if config.resolution is not None:
        x, y = x.with_resolution(config.resolution), y.with_resolution(config.resolution)
    if config.background is not None:
        x = x.with_background(config.background)
    return x, y


def _baseline_entry(scores: BaselineScores) -> BaselineEntry:
    return BaselineEntry(
        rand_index=scores.rand_index,
        voi=VoiEntry(split=scores.voi.split, merge=scores.voi.merge, total=scores.voi.total),
        raw_splits=scores.raw_splits,
        raw_merges=scores.raw_merges,
    )


if __name__ == "__main__":
    sys.exit(main())
