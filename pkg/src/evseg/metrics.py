"""Evaluation: labeled accuracy, displacement sweeps, detection, timing.

Cluster indices are arbitrary, so accuracy first matches clusters to ground
truth labels (exhaustively for small cluster counts, greedily otherwise) and
then scores hard argmax assignments.  Noise events (label 0) never count.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace as dc_replace
from typing import Iterable, Sequence

import numpy as np

from .events import EventPacket, ImageGeometry
from .simulate import SimConfig, preset_two_pebbles, simulate
from .solver import (
    ClusterSet,
    DegenerateInitError,
    OpCounter,
    SegmentationResult,
    SolverConfig,
    initialize_greedy,
    segment,
)
from .variants import segment_fuzzy, segment_mixture
from .warps import WarpParams


class ShapeMismatchError(ValueError):
    """Raised when associations and labels disagree on the event count."""


@dataclass
class AccuracyReport:
    """Share of non-noise events whose hard assignment lands on the cluster
    matched to their true object."""

    accuracy: float
    matching: dict
    per_cluster_mass: np.ndarray
    n_scored: int
    degenerate: bool = False


@dataclass
class CurvePoint:
    """One accuracy measurement of the relative-displacement sweep."""

    delta_v: float
    window_span: float
    displacement_px: float
    accuracy: float
    n_events: int
    degenerate: bool = False


@dataclass
class BenchPoint:
    """Median fixed-iteration timing for one cluster count."""

    n_clusters: int
    kev_per_s: float
    seconds: float
    n_events: int
    iterations: int


def hard_assignments(associations: np.ndarray) -> np.ndarray:
    """Per-event argmax cluster; ties go to the lowest index."""
    return np.argmax(associations, axis=1)


def _match_exhaustive(overlap: np.ndarray, labels: Sequence[int]) -> dict:
    n_clusters = overlap.shape[0]
    best: dict = {}
    best_score = -1

    def recurse(li: int, used: frozenset, current: dict, score: int) -> None:
        nonlocal best, best_score
        if li == len(labels):
            if score > best_score:
                best_score = score
                best = dict(current)
            return
        recurse(li + 1, used, current, score)
        lab = labels[li]
        for j in range(n_clusters):
            if j in used:
                continue
            current[j] = lab
            recurse(li + 1, used | {j}, current, score + int(overlap[j, li]))
            del current[j]

    recurse(0, frozenset(), {}, 0)
    return best


def _match_greedy(overlap: np.ndarray, labels: Sequence[int]) -> dict:
    pairs = [
        (int(overlap[j, li]), j, li)
        for j in range(overlap.shape[0])
        for li in range(len(labels))
    ]
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    matched: dict = {}
    used_labels: set = set()
    for count, j, li in pairs:
        if count <= 0 or j in matched or li in used_labels:
            continue
        matched[j] = labels[li]
        used_labels.add(li)
    return matched


def per_event_accuracy(
    associations: np.ndarray,
    labels: np.ndarray,
    alive: np.ndarray | None = None,
) -> AccuracyReport:
    """Match clusters to true object labels and score hard assignments.

    Events labeled 0 (noise/background) are excluded.  The matching is
    injective: up to ten clusters are matched exhaustively, more than ten
    greedily by overlap.  ``degenerate`` flags a run where some present
    object ended up without any matched cluster.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != associations.shape[0]:
        raise ShapeMismatchError(
            f"{associations.shape[0]} association rows vs {labels.shape[0]} labels"
        )
    n_clusters = associations.shape[1]
    if alive is None:
        alive = np.ones(n_clusters, dtype=bool)
    assigned = hard_assignments(associations)
    scored = labels > 0
    n_scored = int(scored.sum())
    mass = associations.sum(axis=0)
    present = sorted(int(v) for v in np.unique(labels[scored]))
    if n_scored == 0 or not present:
        return AccuracyReport(0.0, {}, mass, 0, degenerate=True)

    live = np.flatnonzero(alive)
    overlap = np.zeros((live.size, len(present)), dtype=np.int64)
    for col, j in enumerate(live):
        sel = scored & (assigned == j)
        for li, lab in enumerate(present):
            overlap[col, li] = int((labels[sel] == lab).sum())
    if live.size <= 10:
        matching_local = _match_exhaustive(overlap, present)
    else:
        matching_local = _match_greedy(overlap, present)
    matching = {int(live[j]): lab for j, lab in matching_local.items()}
    correct = 0
    for j, lab in matching.items():
        correct += int(((assigned == j) & scored & (labels == lab)).sum())
    matched_labels = {
        lab
        for j, lab in matching.items()
        if int(((assigned == j) & scored & (labels == lab)).sum()) > 0
    }
    return AccuracyReport(
        accuracy=correct / n_scored,
        matching=matching,
        per_cluster_mass=mass,
        n_scored=n_scored,
        degenerate=len(matched_labels) < len(present),
    )


def spans_for_displacements(
    delta_vs: Iterable[float], displacements_px: Iterable[float]
) -> dict:
    """Window durations that realise the given relative displacements at
    each relative velocity."""
    return {
        float(dv): [float(d) / abs(dv) for d in displacements_px]
        for dv in delta_vs
        if dv != 0
    }


def accuracy_vs_displacement(
    delta_vs: Iterable[float],
    base_v: float,
    window_spans,
    sim_config: SimConfig | None = None,
    solver_config: SolverConfig | None = None,
    geometry: ImageGeometry | None = None,
) -> list:
    """Accuracy of two-cluster segmentation on the two-strip scene, swept
    over relative velocity and window span.

    ``window_spans`` is either one list of spans applied to every velocity
    or a mapping from velocity to its spans.  Each point simulates its own
    recording of that duration; the x-coordinate of the resulting curve is
    relative displacement |delta_v| * span in pixels.  Points with zero
    relative displacement cannot be segmented by motion and come back
    flagged degenerate.
    """
    if sim_config is None:
        sim_config = SimConfig()
    if solver_config is None:
        solver_config = SolverConfig()
    points = []
    for dv in delta_vs:
        spans = window_spans[float(dv)] if isinstance(window_spans, dict) else window_spans
        for span in spans:
            cfg = dc_replace(sim_config, duration=float(span))
            scene = preset_two_pebbles(dv, base_v, geometry, cfg)
            recording = simulate(scene, geometry or ImageGeometry(240, 180), cfg)
            try:
                result = segment(recording.packet, 2, "flow2", solver_config)
            except DegenerateInitError:
                # too little displacement for even one motion hypothesis:
                # report the point instead of aborting the whole sweep
                points.append(
                    CurvePoint(
                        delta_v=float(dv),
                        window_span=float(span),
                        displacement_px=abs(dv) * float(span),
                        accuracy=0.0,
                        n_events=recording.packet.n,
                        degenerate=True,
                    )
                )
                continue
            report = per_event_accuracy(
                result.associations, recording.labels, result.clusters.alive
            )
            points.append(
                CurvePoint(
                    delta_v=float(dv),
                    window_span=float(span),
                    displacement_px=abs(dv) * float(span),
                    accuracy=report.accuracy,
                    n_events=recording.packet.n,
                    degenerate=report.degenerate or dv == 0,
                )
            )
    return points


def _rect_of(points_x: np.ndarray, points_y: np.ndarray) -> tuple:
    return (
        float(points_x.min()),
        float(points_y.min()),
        float(points_x.max()),
        float(points_y.max()),
    )


def _rect_area(r: tuple) -> float:
    return max(0.0, r[2] - r[0]) * max(0.0, r[3] - r[1])


def _rect_intersection(a: tuple, b: tuple) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(0.0, w) * max(0.0, h)


def detection_success(
    result: SegmentationResult,
    packet: EventPacket,
    box: tuple,
    membership_threshold: float = 0.5,
) -> bool:
    """Whether some cluster detects the object marked by ``box``.

    ``box`` is (x0, y0, width, height).  For each live cluster the bounding
    rectangle of its confidently owned events (association above the
    threshold) is taken; the best-overlapping cluster succeeds iff the
    intersection covers at least half of ``box`` and more of the cluster's
    rectangle lies inside the box than outside.
    """
    bx = (box[0], box[1], box[0] + box[2], box[1] + box[3])
    box_area = _rect_area(bx)
    best_inter = -1.0
    best_rect = None
    for j in np.flatnonzero(result.clusters.alive):
        sel = result.associations[:, j] > membership_threshold
        if not sel.any():
            continue
        rect = _rect_of(packet.x[sel], packet.y[sel])
        inter = _rect_intersection(rect, bx)
        if inter > best_inter:
            best_inter = inter
            best_rect = rect
    if best_rect is None:
        return False
    inside = best_inter
    outside = _rect_area(best_rect) - inside
    return inside >= 0.5 * box_area and inside > outside


def throughput_benchmark(
    packet: EventPacket,
    j_values: Iterable[int],
    config: SolverConfig | None = None,
    iterations: int = 10,
    repeats: int = 5,
    models: str = "flow2",
    seed: int = 0,
) -> list:
    """Median wall-clock throughput of the layered solver at a fixed
    iteration budget, in kilo-events-times-iterations per second.

    Initialisation is a fixed random draw (not the greedy search) and
    cluster death is disabled, so every run performs the same amount of
    work per iteration.
    """
    if config is None:
        config = SolverConfig()
    cfg = dc_replace(config, max_iters=iterations, collapse_frac=1e-12)
    out = []
    for j in j_values:
        rng = np.random.default_rng(seed)
        params = [
            WarpParams("flow2", rng.uniform(-60.0, 60.0, 2)) for _ in range(j)
        ]
        uniform = np.full((packet.n, j), 1.0 / j)
        times = []
        for _ in range(repeats):
            init = (
                ClusterSet([p for p in params], np.ones(j, dtype=bool)),
                uniform.copy(),
            )
            t0 = time.perf_counter()
            segment(packet, j, models, cfg, init=init, early_stop=False)
            times.append(time.perf_counter() - t0)
        med = float(np.median(times))
        out.append(
            BenchPoint(
                n_clusters=int(j),
                kev_per_s=packet.n * iterations / med / 1000.0,
                seconds=med,
                n_events=packet.n,
                iterations=iterations,
            )
        )
    return out


def compare_methods(
    packet: EventPacket,
    n_clusters: int,
    models="flow2",
    config: SolverConfig | None = None,
    labels: np.ndarray | None = None,
    iterations: int = 40,
) -> dict:
    """Run the layered solver and both variants from one shared greedy
    initialisation for a fixed iteration count.

    Returns per method: the result, the summed-sharpness trace on the common
    scale, cumulative warp counts per iteration, the final objective, and
    accuracy when labels are supplied.
    """
    if config is None:
        config = SolverConfig()
    cfg = dc_replace(config, max_iters=iterations)
    shared_counter = OpCounter()
    init = initialize_greedy(packet, n_clusters, models, cfg, shared_counter)
    runners = {
        "layered": segment,
        "mixture": segment_mixture,
        "fuzzy": segment_fuzzy,
    }
    out: dict = {"init_warp_cost": shared_counter.iwe_builds}
    for name, run in runners.items():
        counter = OpCounter()
        result = run(
            packet,
            n_clusters,
            models,
            cfg,
            init=(init[0].copy(), init[1].copy()),
            early_stop=False,
            counter=counter,
        )
        entry = {
            "result": result,
            "objective_trace": result.objective_trace,
            "warp_counts": result.diagnostics["warp_counts"],
            "final_objective": float(result.objective_trace[-1]),
        }
        if "own_trace" in result.diagnostics:
            entry["own_trace"] = result.diagnostics["own_trace"]
        if labels is not None:
            entry["accuracy"] = per_event_accuracy(
                result.associations, labels, result.clusters.alive
            ).accuracy
        out[name] = entry
    return out
