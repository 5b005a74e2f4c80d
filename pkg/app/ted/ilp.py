# app/ted/ilp.py
"""The TED integer linear program over candidate regions, and its exact solver.

Per-location assignment variables collapse to one decision per candidate
region: all locations of a region share their tolerable set, and the
objective only sees which (ground truth, proposal) label pairs co-occur.

For any feasible complete assignment with match set M,
``splits = |M| - |K_x|`` and ``merges = |M| - |K_y|``, so minimizing
``alpha * splits + beta * merges`` means minimizing the number of matched
label pairs. The branch-and-bound lower bound is built on that count.
"""

from __future__ import annotations

import itertools
import logging
import math
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .errors import EnumerationLimitError, InfeasibleAssignmentError, ModelError
from .tolerance import CandidateRegion

logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_CAP = 10**6

# How often (in nodes) the wall clock is consulted.
_CLOCK_EVERY = 256


class SolverLimits(BaseModel):
    """Search limits; ``None`` disables a limit."""

    model_config = ConfigDict(frozen=True)

    max_nodes: int | None = Field(2_000_000, ge=1)
    max_seconds: float | None = Field(60.0, gt=0)


@dataclass(frozen=True)
class TedModel:
    """A validated TED instance. Build it with :func:`build_model`."""

    regions: tuple[CandidateRegion, ...]
    gt_labels: tuple[int, ...]
    prop_labels: tuple[int, ...]
    alpha: float = 1.0
    beta: float = 1.0

    def identity_assignment(self) -> tuple[int, ...]:
        return tuple(r.prop_label for r in self.regions)

    def search_space(self) -> int:
        return math.prod(len(r.candidates) for r in self.regions)


@dataclass(frozen=True)
class TedSolution:
    """An assignment of one label per region plus everything derived from it."""

    assignment: tuple[int, ...]
    matches: frozenset[tuple[int, int]]
    splits_per_gt_label: Mapping[int, int]
    merges_per_prop_label: Mapping[int, int]
    splits: int
    merges: int
    objective: float
    optimal: bool
    gap: float = 0.0
    nodes: int = 0
    seconds: float = 0.0


def build_model(
    regions: Sequence[CandidateRegion],
    alpha: float = 1.0,
    beta: float = 1.0,
    prop_labels: Iterable[int] | None = None,
) -> TedModel:
    """Validates regions and weights into a model.

    Args:
        regions: Candidate regions partitioning the evaluated locations.
        alpha: Cost of one split.
        beta: Cost of one merge.
        prop_labels: K_y, if known independently of the regions. Every label
            in it must be the original label of some region, otherwise no
            relabeling could use it and the coverage constraint is infeasible.

    Raises:
        ModelError: On negative weights, empty or inconsistent candidate sets,
            or proposal labels no region carries.
    """
    for name, weight in (("alpha", alpha), ("beta", beta)):
        if not math.isfinite(weight) or weight < 0:
            raise ModelError(f"{name} must be a non-negative number, got {weight}")

    for index, region in enumerate(regions):
        if not region.candidates:
            raise ModelError(f"region {index} has an empty candidate set")
        if region.prop_label not in region.candidates:
            raise ModelError(
                f"region {index} cannot keep its own label {region.prop_label}"
            )

    carried = {r.prop_label for r in regions}
    if prop_labels is None:
        labels = carried
    else:
        labels = {int(l) for l in prop_labels}
        missing = labels - carried
        if missing:
            raise ModelError(
                f"proposal labels {sorted(missing)} are not carried by any region"
            )

    for index, region in enumerate(regions):
        stray = set(region.candidates) - labels
        if stray:
            raise ModelError(f"region {index} has candidates {sorted(stray)} outside K_y")

    return TedModel(
        regions=tuple(regions),
        gt_labels=tuple(sorted({r.gt_label for r in regions})),
        prop_labels=tuple(sorted(labels)),
        alpha=float(alpha),
        beta=float(beta),
    )


def evaluate_assignment(
    model: TedModel,
    assignment: Sequence[int],
    *,
    optimal: bool = False,
    gap: float = 0.0,
    nodes: int = 0,
    seconds: float = 0.0,
) -> TedSolution:
    """Recomputes matches, splits and merges of a complete assignment.

    Raises:
        InfeasibleAssignmentError: If a region takes a label outside its
            candidates or some proposal label is never used.
    """
    assignment = tuple(int(l) for l in assignment)
    if len(assignment) != len(model.regions):
        raise InfeasibleAssignmentError(
            f"assignment has {len(assignment)} labels for {len(model.regions)} regions"
        )
    for index, (region, label) in enumerate(zip(model.regions, assignment)):
        if label not in region.candidates:
            raise InfeasibleAssignmentError(
                f"region {index} cannot take label {label}, candidates {region.candidates}"
            )
    uncovered = set(model.prop_labels) - set(assignment)
    if uncovered:
        raise InfeasibleAssignmentError(f"proposal labels {sorted(uncovered)} are unused")

    matches = frozenset((r.gt_label, l) for r, l in zip(model.regions, assignment))
    gt_degree = Counter(k for k, _ in matches)
    prop_degree = Counter(l for _, l in matches)
    splits_per_gt = {k: gt_degree[k] - 1 for k in model.gt_labels}
    merges_per_prop = {l: prop_degree[l] - 1 for l in model.prop_labels}
    splits = sum(splits_per_gt.values())
    merges = sum(merges_per_prop.values())
    return TedSolution(
        assignment=assignment,
        matches=matches,
        splits_per_gt_label=splits_per_gt,
        merges_per_prop_label=merges_per_prop,
        splits=splits,
        merges=merges,
        objective=_objective(model, splits, merges),
        optimal=optimal,
        gap=gap,
        nodes=nodes,
        seconds=seconds,
    )


def solve_exact(model: TedModel, limits: SolverLimits | None = None) -> TedSolution:
    """Minimizes ``alpha * splits + beta * merges`` by depth-first branch and bound.

    The identity assignment is the first incumbent and only strictly better
    assignments replace it, so the proposal's own labels are kept whenever
    they are optimal. Otherwise the result is the first optimum reached in
    the search order of :class:`BranchAndBound`: values with fewer new
    matched pairs come first, and only among those is the identity label
    preferred, then the smallest label. If a limit is hit the best
    assignment found so far is returned with ``optimal=False`` and the gap
    to a proven lower bound.
    """
    solution = BranchAndBound(model, limits or SolverLimits()).solve()
    logger.info(
        "Solved TED model: %d regions, splits=%d merges=%d objective=%g optimal=%s nodes=%d",
        len(model.regions),
        solution.splits,
        solution.merges,
        solution.objective,
        solution.optimal,
        solution.nodes,
    )
    return solution


def node_lower_bound(model: TedModel, fixed: Mapping[int, int]) -> float:
    """The solver's lower bound for the subtree where ``fixed`` regions are decided."""
    state = _SearchState(model)
    for r, l in fixed.items():
        state.assign(r, l)
    undecided = [r for r in range(len(model.regions)) if r not in fixed]
    return state.lower_bound(undecided)


def brute_force_solve(
    model: TedModel,
    fixed: Mapping[int, int] | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> TedSolution:
    """Enumerates every assignment (optionally completing ``fixed``) and keeps the best.

    Intended as a test oracle; each assignment is scored from scratch.

    Raises:
        EnumerationLimitError: If the number of assignments exceeds ``cap``.
        InfeasibleAssignmentError: If no enumerated assignment is feasible.
    """
    fixed = fixed or {}
    choices = []
    for r, region in enumerate(model.regions):
        if r in fixed:
            if fixed[r] not in region.candidates:
                raise InfeasibleAssignmentError(f"region {r} cannot take label {fixed[r]}")
            choices.append((fixed[r],))
        else:
            choices.append(_preferred_values(region))
    space = math.prod(len(c) for c in choices)
    if space > cap:
        raise EnumerationLimitError(f"{space} assignments exceed the cap of {cap}")

    needed = len(model.prop_labels)
    gt_labels = model.gt_labels
    best: tuple[int, ...] | None = None
    best_objective = math.inf
    for assignment in itertools.product(*choices):
        matches = {(region.gt_label, l) for region, l in zip(model.regions, assignment)}
        prop_degree = Counter(l for _, l in matches)
        if len(prop_degree) != needed:
            continue
        gt_degree = Counter(k for k, _ in matches)
        splits = sum(gt_degree[k] - 1 for k in gt_labels)
        merges = sum(d - 1 for d in prop_degree.values())
        objective = _objective(model, splits, merges)
        if objective < best_objective - _eps(model):
            best, best_objective = assignment, objective

    if best is None:
        raise InfeasibleAssignmentError("no enumerated assignment covers every proposal label")
    return evaluate_assignment(model, best, optimal=True)


@dataclass(frozen=True)
class LpRow:
    """One linear constraint ``sum(coef * var) <sense> rhs``."""

    name: str
    terms: tuple[tuple[float, str], ...]
    sense: str
    rhs: float


@dataclass(frozen=True)
class LpProgram:
    objective: tuple[tuple[float, str], ...]
    rows: tuple[LpRow, ...]
    binaries: tuple[str, ...]
    generals: tuple[str, ...] = field(default=())


def lp_program(model: TedModel) -> LpProgram:
    """The full ILP with region-collapsed assignment variables."""
    regions = model.regions

    def v(r: int, l: int) -> str:
        return f"v_{r}_{l}"

    pairs = sorted({(region.gt_label, l) for region in regions for l in region.candidates})
    by_pair: dict[tuple[int, int], list[int]] = {}
    by_label: dict[int, list[int]] = {}
    for r, region in enumerate(regions):
        for l in region.candidates:
            by_pair.setdefault((region.gt_label, l), []).append(r)
            by_label.setdefault(l, []).append(r)

    rows: list[LpRow] = []
    for r, region in enumerate(regions):
        rows.append(LpRow(f"c3_{r}", tuple((1.0, v(r, l)) for l in region.candidates), "=", 1.0))
    for l in model.prop_labels:
        rows.append(LpRow(f"c4_{l}", tuple((1.0, v(r, l)) for r in by_label[l]), ">=", 1.0))
    for r, region in enumerate(regions):
        k = region.gt_label
        for l in region.candidates:
            rows.append(
                LpRow(f"c5_{r}_{l}", ((1.0, f"a_{k}_{l}"), (-1.0, v(r, l))), ">=", 0.0)
            )
    for k, l in pairs:
        terms = ((1.0, f"a_{k}_{l}"),) + tuple((-1.0, v(r, l)) for r in by_pair[(k, l)])
        rows.append(LpRow(f"c6_{k}_{l}", terms, "<=", 0.0))
    for k in model.gt_labels:
        terms = ((1.0, f"s_{k}"),) + tuple((-1.0, f"a_{k}_{l}") for kk, l in pairs if kk == k)
        rows.append(LpRow(f"c7_{k}", terms, "=", -1.0))
    for l in model.prop_labels:
        terms = ((1.0, f"m_{l}"),) + tuple((-1.0, f"a_{k}_{l}") for k, ll in pairs if ll == l)
        rows.append(LpRow(f"c8_{l}", terms, "=", -1.0))
    rows.append(LpRow("c9", ((1.0, "s"),) + tuple((-1.0, f"s_{k}") for k in model.gt_labels), "=", 0.0))
    rows.append(LpRow("c10", ((1.0, "m"),) + tuple((-1.0, f"m_{l}") for l in model.prop_labels), "=", 0.0))

    binaries = [v(r, l) for r, region in enumerate(regions) for l in region.candidates]
    binaries += [f"a_{k}_{l}" for k, l in pairs]
    generals = [f"s_{k}" for k in model.gt_labels] + [f"m_{l}" for l in model.prop_labels]
    generals += ["s", "m"]
    return LpProgram(
        objective=((model.alpha, "s"), (model.beta, "m")),
        rows=tuple(rows),
        binaries=tuple(binaries),
        generals=tuple(generals),
    )


def export_lp(model: TedModel, path: str | Path) -> None:
    """Writes the ILP in CPLEX LP format for cross-checking with external solvers."""
    program = lp_program(model)
    out = [
        "\\ Tolerant edit distance ILP",
        f"\\ {len(model.regions)} regions, |K_x|={len(model.gt_labels)}, |K_y|={len(model.prop_labels)}",
        "Minimize",
    ]
    out += _wrap(" obj: " + _expression(program.objective))
    out.append("Subject To")
    for row in program.rows:
        out += _wrap(f" {row.name}: {_expression(row.terms)} {row.sense} {_number(row.rhs)}")
    out.append("Binary")
    out += [f" {name}" for name in program.binaries]
    out.append("General")
    out += [f" {name}" for name in program.generals]
    out.append("End")
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")
    logger.info("Exported LP with %d constraints to %s", len(program.rows), path)


class _SearchState:
    """Incremental bookkeeping of a partial assignment."""

    def __init__(self, model: TedModel):
        self.model = model
        self.gt = [r.gt_label for r in model.regions]
        self.candidates = [frozenset(r.candidates) for r in model.regions]
        self.assignment: list[int | None] = [None] * len(model.regions)
        self.pair_count: dict[tuple[int, int], int] = {}
        self.gt_partners: dict[int, set[int]] = {k: set() for k in model.gt_labels}
        self.prop_partners: dict[int, set[int]] = {l: set() for l in model.prop_labels}
        self.available = dict.fromkeys(model.prop_labels, 0)
        for cands in self.candidates:
            for l in cands:
                self.available[l] += 1
        self.uncovered = len(model.prop_labels)
        self.matches = 0

    def new_pairs(self, r: int, label: int) -> int:
        return 0 if (self.gt[r], label) in self.pair_count else 1

    def assign(self, r: int, label: int) -> None:
        k = self.gt[r]
        count = self.pair_count.get((k, label), 0)
        self.pair_count[(k, label)] = count + 1
        if count == 0:
            if not self.prop_partners[label]:
                self.uncovered -= 1
            self.gt_partners[k].add(label)
            self.prop_partners[label].add(k)
            self.matches += 1
        for l in self.candidates[r]:
            self.available[l] -= 1
        self.assignment[r] = label

    def unassign(self, r: int) -> None:
        k, label = self.gt[r], self.assignment[r]
        count = self.pair_count[(k, label)] - 1
        if count == 0:
            del self.pair_count[(k, label)]
            self.gt_partners[k].discard(label)
            self.prop_partners[label].discard(k)
            if not self.prop_partners[label]:
                self.uncovered += 1
            self.matches -= 1
        else:
            self.pair_count[(k, label)] = count
        for l in self.candidates[r]:
            self.available[l] += 1
        self.assignment[r] = None

    def coverable(self, r: int) -> bool:
        """Whether every label region ``r`` could have covered is still coverable."""
        return all(self.prop_partners[l] or self.available[l] > 0 for l in self.candidates[r])

    def lower_bound(self, undecided: Iterable[int]) -> float:
        by_gt: dict[int, list[frozenset[int]]] = {}
        for r in undecided:
            by_gt.setdefault(self.gt[r], []).append(self.candidates[r])

        per_gt = 0
        for k, cand_sets in by_gt.items():
            partners = self.gt_partners[k]
            if partners:
                if any(partners.isdisjoint(c) for c in cand_sets):
                    per_gt += 1
            else:
                per_gt += 1 if frozenset.intersection(*cand_sets) else 2

        matches = self.matches + max(per_gt, self.uncovered)
        splits = max(0, matches - len(self.model.gt_labels))
        merges = max(0, matches - len(self.model.prop_labels))
        return _objective(self.model, splits, merges)


@dataclass
class _Frame:
    region: int
    values: list[int]
    bound: float
    next: int = 0


class BranchAndBound:
    """Depth-first search over region labels with an admissible match-count bound.

    Regions with a single candidate are fixed before the search. The rest
    are branched on by descending size; values are tried by fewest new
    matched pairs, then the region's own label, then ascending label. Among
    several optima the first one reached in this order is kept, which need
    not be the one closest to the identity.
    """

    def __init__(self, model: TedModel, limits: SolverLimits):
        self.model = model
        self.limits = limits
        self.nodes = 0
        self._start = 0.0

    def solve(self) -> TedSolution:
        model = self.model
        self._start = time.perf_counter()
        eps = _eps(model)

        state = _SearchState(model)
        free = []
        for r, region in enumerate(model.regions):
            if len(region.candidates) == 1:
                state.assign(r, region.candidates[0])
            else:
                free.append(r)
        free.sort(key=lambda r: (-model.regions[r].size, r))

        incumbent = model.identity_assignment()
        best = evaluate_assignment(model, incumbent).objective
        root_bound = state.lower_bound(free)

        frames: list[_Frame] = []
        limit_hit = False

        def open_frame(depth: int) -> bool:
            bound = state.lower_bound(free[depth:])
            if bound >= best - eps:
                return False
            r = free[depth]
            values = sorted(
                model.regions[r].candidates,
                key=lambda l: (state.new_pairs(r, l), l != model.regions[r].prop_label, l),
            )
            frames.append(_Frame(r, values, bound))
            return True

        if free and root_bound < best - eps:
            open_frame(0)

        while frames:
            frame = frames[-1]
            if frame.next == len(frame.values):
                frames.pop()
                if frames:
                    state.unassign(frames[-1].region)
                continue

            label = frame.values[frame.next]
            frame.next += 1
            state.assign(frame.region, label)
            self.nodes += 1
            if self._out_of_budget():
                limit_hit = True
                break

            if not state.coverable(frame.region):
                state.unassign(frame.region)
                continue

            depth = len(frames)
            if depth == len(free):
                objective = _objective(
                    model,
                    state.matches - len(model.gt_labels),
                    state.matches - len(model.prop_labels),
                )
                if objective < best - eps:
                    best = objective
                    incumbent = tuple(state.assignment)
                    if best <= root_bound + eps:
                        break
                state.unassign(frame.region)
                continue

            if not open_frame(depth):
                state.unassign(frame.region)

        seconds = time.perf_counter() - self._start
        if limit_hit:
            lower = min([best] + [f.bound for f in frames])
            logger.warning(
                "Search limit hit after %d nodes (%.2fs); returning incumbent with gap %g",
                self.nodes,
                seconds,
                best - lower,
            )
            return evaluate_assignment(
                model, incumbent, optimal=False, gap=max(0.0, best - lower),
                nodes=self.nodes, seconds=seconds,
            )
        return evaluate_assignment(
            model, incumbent, optimal=True, nodes=self.nodes, seconds=seconds
        )

    def _out_of_budget(self) -> bool:
        limits = self.limits
        if limits.max_nodes is not None and self.nodes >= limits.max_nodes:
            return True
        if limits.max_seconds is not None and self.nodes % _CLOCK_EVERY == 0:
            return time.perf_counter() - self._start >= limits.max_seconds
        return False


def _objective(model: TedModel, splits: int, merges: int) -> float:
    return model.alpha * splits + model.beta * merges


def _eps(model: TedModel) -> float:
    return 1e-9 * max(1.0, model.alpha + model.beta)


def _preferred_values(region: CandidateRegion) -> tuple[int, ...]:
    """Own label first, then ascending."""
    rest = tuple(l for l in region.candidates if l != region.prop_label)
    return (region.prop_label,) + rest


def _number(value: float) -> str:
    value = float(value)
    if value.is_integer():
        return str(int(value))
    return repr(value)


def _expression(terms: Iterable[tuple[float, str]]) -> str:
    parts = []
    for coef, name in terms:
        if not parts:
            parts.append(f"{'- ' if coef < 0 else ''}{_number(abs(coef))} {name}")
        else:
            parts.append(f"{'-' if coef < 0 else '+'} {_number(abs(coef))} {name}")
    return " ".join(parts)


def _wrap(line: str, width: int = 78) -> list[str]:
    """Breaks long LP lines before a sign; continuation lines are indented."""
    if len(line) <= width:
        return [line]
    out: list[str] = []
    current = ""
    for token in re.split(r" (?=[+-] )", line):
        if current and len(current) + 1 + len(token) > width:
            out.append(current)
            current = "   " + token
        else:
            current = f"{current} {token}" if current else token
    out.append(current)
    return out
