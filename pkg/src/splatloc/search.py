"""Best-first pose refinement over a quantized pose lattice.

Each level of a :class:`~splatloc.pose.StepSchedule` runs one best-first
search seeded at the best pose found so far. Nodes are poses; edges are the
12 single-axis moves of :func:`~splatloc.pose.neighbors`; a node's identity
is its :func:`quantize` key at half the level's step. The priority is
``f = lam * g + h`` where ``g`` counts lattice moves from the level seed and
``h`` is an image-difference score between the pose's render and the query.
With the default ``lam = 0`` this is greedy best-first on ``h``.

The open list is a binary heap ordered by ``(f, insertion_seq)``; when an
open node is reached by a shorter path its entry is superseded by a new one
carrying the same ``insertion_seq`` (stale entries are skipped on pop).
"""

from __future__ import annotations

import heapq
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Literal, Union

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, ContractError
from .metrics import HEURISTICS, PSNR_CAP
from .pose import DEFAULT_SCHEDULE, Pose, StepSchedule, neighbors
from .renderer import Camera, render
from .scene import Scene

log = logging.getLogger(__name__)

__all__ = [
    "QuantizedKey",
    "SearchNode",
    "SearchOptions",
    "TraceEntry",
    "LevelStats",
    "RefinementResult",
    "quantize",
    "best_first_search",
    "refine",
    "expansion_trace",
    "consistency_violation_rate",
    "write_trace_jsonl",
    "default_h_threshold",
    "downsample",
]

QuantizedKey = tuple[int, int, int, int, int, int, int]
Termination = Literal["budget", "h_threshold", "stagnation"]
Heuristic = Union[str, Callable[[NDArray, NDArray], float]]


def quantize(p: Pose, rho_q: float, rho_t: float) -> QuantizedKey:
    """Integer lattice key ``round(q_i / rho_q), round(t_i / rho_t)``."""
    kq = np.rint(p.q / rho_q).astype(np.int64)
    kt = np.rint(p.t / rho_t).astype(np.int64)
    return tuple(int(v) for v in kq) + tuple(int(v) for v in kt)


@dataclass
class SearchNode:
    pose: Pose
    key: QuantizedKey
    g: int
    h: float
    f: float
    parent_key: QuantizedKey | None
    insertion_seq: int
    version: int = 0


@dataclass(frozen=True)
class TraceEntry:
    """One popped node, in pop order."""

    seq: int
    level: int
    key: QuantizedKey
    g: int
    h: float
    f: float
    parent_key: QuantizedKey | None
    insertion_seq: int


@dataclass(frozen=True)
class LevelStats:
    level: int
    expansions: int
    evaluations: int
    best_h: float
    terminated_by: Termination


@dataclass
class SearchOptions:
    """Knobs for :func:`refine`.

    ``h_threshold=None`` picks a default per heuristic (see
    :func:`default_h_threshold`). ``max_expansions`` caps pops across all
    levels; each level is also capped by its own schedule budget.
    """

    lam: float = 0.0
    h_threshold: float | None = None
    stagnation_limit: int = 40
    max_expansions: int = 400
    decimation: int = 1
    opacity_mode: str = "direct"
    workers: int = 1
    record_events: bool = False

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if self.stagnation_limit < 1:
            raise ConfigError("stagnation_limit must be >= 1")
        if self.max_expansions < 0:
            raise ConfigError("max_expansions must be >= 0")
        if self.decimation not in (1, 2, 4):
            raise ConfigError("decimation must be 1, 2 or 4")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class RefinementResult:
    best_pose: Pose
    best_h: float
    initial_h: float
    expansions: int
    evaluations: int
    per_level_stats: list[LevelStats]
    terminated_by: Termination
    trace: list[TraceEntry] = field(default_factory=list)
    # ("push", key, f, seq) / ("update", key, f, seq) / ("pop", key, f, seq)
    events: list[tuple] | None = None


def best_first_search(
    initial: Pose,
    evaluate: Callable[[Pose], float],
    schedule: StepSchedule = DEFAULT_SCHEDULE,
    *,
    lam: float = 0.0,
    h_threshold: float = float("-inf"),
    stagnation_limit: int = 40,
    max_expansions: int = 400,
    workers: int = 1,
    record_events: bool = False,
    initial_h: float | None = None,
) -> RefinementResult:
    """Multi-level best-first search minimizing ``evaluate`` over the lattice.

    A level stops when its budget is spent, when ``stagnation_limit``
    consecutive expansions fail to lower the best ``h``, or when its open
    list empties. A popped node with ``h < h_threshold`` ends the whole
    search. The result holds the lowest-``h`` pose ever evaluated.
    """
    if not isinstance(schedule, StepSchedule) or not schedule.levels:
        raise ConfigError("a non-empty StepSchedule is required")

    best_pose = initial
    best_h = float(evaluate(initial)) if initial_h is None else float(initial_h)
    h0 = best_h
    trace: list[TraceEntry] = []
    events: list[tuple] | None = [] if record_events else None
    stats: list[LevelStats] = []
    total = 0
    evaluations = 0 if initial_h is not None else 1
    seq = 0
    terminated: Termination = "budget"
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    try:
        for level_idx, lv in enumerate(schedule.levels):
            rho_q, rho_t = lv.dq / 2.0, lv.dt / 2.0
            heap: list[tuple[float, int, int, QuantizedKey]] = []
            open_nodes: dict[QuantizedKey, SearchNode] = {}
            closed: set[QuantizedKey] = set()

            def push(node: SearchNode, kind: str = "push") -> None:
                heapq.heappush(heap, (node.f, node.insertion_seq, node.version, node.key))
                if events is not None:
                    events.append((kind, node.key, node.f, node.insertion_seq))

            seed_key = quantize(best_pose, rho_q, rho_t)
            seed = SearchNode(best_pose, seed_key, 0, best_h, best_h, None, seq)
            seq += 1
            open_nodes[seed_key] = seed
            push(seed)

            level_exp = 0
            level_evals = 0
            since_improve = 0
            reason: Termination
            while True:
                if total >= max_expansions or level_exp >= lv.budget:
                    reason = "budget"
                    break
                if not heap:
                    reason = "stagnation"
                    break
                f, ins, version, key = heapq.heappop(heap)
                node = open_nodes.get(key)
                if node is None or node.version != version:
                    continue
                del open_nodes[key]
                if events is not None:
                    events.append(("pop", key, f, ins))
                trace.append(TraceEntry(total, level_idx, key, node.g, node.h, node.f, node.parent_key, ins))
                total += 1
                level_exp += 1
                if node.h < h_threshold:
                    reason = "h_threshold"
                    break
                closed.add(key)

                cands = neighbors(node.pose, lv.dq, lv.dt)
                keys = [quantize(c, rho_q, rho_t) for c in cands]
                fresh: dict[QuantizedKey, Pose] = {}
                for c, k in zip(cands, keys):
                    if k not in closed and k not in open_nodes and k not in fresh:
                        fresh[k] = c
                if pool is not None:
                    hs = dict(zip(fresh, pool.map(evaluate, fresh.values())))
                else:
                    hs = {k: evaluate(c) for k, c in fresh.items()}
                level_evals += len(hs)

                improved = False
                tentative = node.g + 1
                for c, k in zip(cands, keys):
                    if k in closed:
                        continue
                    child = open_nodes.get(k)
                    if child is None:
                        h = float(hs[k])
                        child = SearchNode(c, k, tentative, h, lam * tentative + h, key, seq)
                        seq += 1
                        open_nodes[k] = child
                        push(child)
                        if h < best_h:
                            best_h, best_pose = h, c
                            improved = True
                    elif tentative < child.g:
                        child.g = tentative
                        child.f = lam * tentative + child.h
                        child.parent_key = key
                        child.version += 1
                        push(child, "update")
                since_improve = 0 if improved else since_improve + 1
                if since_improve >= stagnation_limit:
                    reason = "stagnation"
                    break

            evaluations += level_evals
            stats.append(LevelStats(level_idx, level_exp, level_evals, best_h, reason))
            log.debug("level %d: %d expansions, best h %.6g (%s)", level_idx, level_exp, best_h, reason)
            terminated = reason
            if reason == "h_threshold" or total >= max_expansions:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    return RefinementResult(best_pose, best_h, h0, total, evaluations, stats, terminated, trace, events)


def downsample(img: NDArray[np.float64], factor: int) -> NDArray[np.float64]:
    """Block-average an ``(H, W, C)`` image by an integer factor."""
    if factor == 1:
        return img
    h, w = img.shape[:2]
    return img.reshape(h // factor, factor, w // factor, factor, -1).mean(axis=(1, 3))


def default_h_threshold(kind: Heuristic, query: NDArray[np.float64]) -> float:
    """Score below which a render counts as matching the query.

    ``sad``: 0.5% of the query's summed intensity. ``psnr``: PSNR above
    50 dB. ``ssim``: SSIM above 0.9999. Custom callables get no threshold.
    """
    if kind == "sad":
        return 0.005 * float(np.sum(query))
    if kind == "psnr":
        return PSNR_CAP - 50.0
    if kind == "ssim":
        return 1e-4
    return float("-inf")


def refine(
    scene: Scene,
    cam: Camera,
    query: NDArray[np.float64],
    initial: Pose,
    schedule: StepSchedule = DEFAULT_SCHEDULE,
    heuristic_kind: Heuristic = "sad",
    opts: SearchOptions | None = None,
) -> RefinementResult:
    """Refine ``initial`` so the scene rendered from it matches ``query``.

    ``heuristic_kind`` is ``"sad"``, ``"psnr"``, ``"ssim"`` or a callable
    ``(query, rendered) -> float``.
    """
    opts = opts or SearchOptions()
    opts.validate()
    query = np.asarray(query, dtype=np.float64)
    if query.shape != cam.shape:
        raise ContractError(f"query shape {query.shape} does not match camera {cam.shape}")
    if callable(heuristic_kind):
        score = heuristic_kind
    elif heuristic_kind in HEURISTICS:
        score = HEURISTICS[heuristic_kind]
    else:
        raise ConfigError(f"unknown heuristic {heuristic_kind!r}")

    search_cam = cam.downscaled(opts.decimation)
    search_query = downsample(query, opts.decimation)
    threshold = opts.h_threshold
    if threshold is None:
        threshold = default_h_threshold(heuristic_kind, search_query)

    def evaluate(pose: Pose) -> float:
        return float(score(search_query, render(scene, search_cam, pose, opts.opacity_mode)))

    return best_first_search(
        initial,
        evaluate,
        schedule,
        lam=opts.lam,
        h_threshold=threshold,
        stagnation_limit=opts.stagnation_limit,
        max_expansions=opts.max_expansions,
        workers=opts.workers,
        record_events=opts.record_events,
    )


def expansion_trace(result: RefinementResult) -> list[tuple[QuantizedKey, int, float, float]]:
    """``(key, g, h, f)`` for every popped node, in pop order."""
    return [(e.key, e.g, e.h, e.f) for e in result.trace]


def consistency_violation_rate(result: RefinementResult, edge_cost: float = 1.0) -> float:
    """Fraction of expanded parent→child edges with ``h(parent) > edge_cost + h(child)``.

    Image-difference heuristics are not consistent in general; this only
    measures how often the bound fails on a run. Returns ``nan`` when the
    trace has no such edges.
    """
    h_by = {(e.level, e.key): e.h for e in result.trace}
    edges = violations = 0
    for e in result.trace:
        if e.parent_key is None:
            continue
        hp = h_by.get((e.level, e.parent_key))
        if hp is None:
            continue
        edges += 1
        if hp > edge_cost + e.h:
            violations += 1
    return violations / edges if edges else float("nan")


def write_trace_jsonl(result: RefinementResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in result.trace:
            row = {"seq": e.seq, "level": e.level, "key": list(e.key), "g": e.g, "h": e.h, "f": e.f}
            fh.write(json.dumps(row) + "\n")


def result_summary(result: RefinementResult) -> dict:
    return {
        "best_pose": result.best_pose.as_array().tolist(),
        "best_h": result.best_h,
        "initial_h": result.initial_h,
        "expansions": result.expansions,
        "evaluations": result.evaluations,
        "terminated_by": result.terminated_by,
        "levels": [asdict(s) for s in result.per_level_stats],
    }
