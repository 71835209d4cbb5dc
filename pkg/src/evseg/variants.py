"""Alternative clustering back-ends sharing the warped-image machinery.

Two drop-in replacements for the layered solver's association rule, kept
for head-to-head comparison:

* a probabilistic mixture: each cluster's *unweighted* warped image,
  normalised to integrate to one over the sensor, acts as that component's
  spatial density; memberships follow from Bayes' rule with learned mixing
  weights, and motions climb the total log-likelihood.
* a fuzzy assignment: the affinity of event k to cluster j is
  log(1 + image value at its warped position), memberships follow the
  classic inverse-power rule with fuzziness b, and motions climb the
  membership-weighted affinity sum.

Both report the same result type as the layered solver and additionally
track the summed per-cluster sharpness so the three methods can be compared
on one scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventPacket
from .iwe import accumulate_unweighted, sample_local, smooth, variance_contrast
from .solver import (
    ClusterSet,
    OpCounter,
    SegmentationResult,
    SolverConfig,
    _line_search_step,
    _resolve_models,
    initialize_greedy,
    objective,
)
from .warps import WarpParams, displacement_sensitivity, warp_packet


@dataclass
class MixtureState:
    """Clusters, per-event memberships and mixing weights of the mixture."""

    clusters: ClusterSet
    membership: np.ndarray      # (n_events, n_clusters), rows sum to 1
    mixing: np.ndarray          # (n_clusters,), sums to 1 over live clusters


@dataclass
class FuzzyState:
    """Clusters and fuzzy memberships with fuzziness exponent b."""

    clusters: ClusterSet
    membership: np.ndarray
    b: float


def _density_image(packet: EventPacket, params: WarpParams, config: SolverConfig,
                   counter: OpCounter | None = None):
    """Smoothed unit-mass image of all events under one motion, plus the
    warped coordinates."""
    wx, wy = warp_packet(packet, params)
    img = accumulate_unweighted(wx, wy, packet.geometry, config.bilinear)
    if counter is not None:
        counter.iwe_builds += 1
    return smooth(img, config.sigma), wx, wy


def component_likelihood(
    packet: EventPacket,
    params: WarpParams,
    config: SolverConfig,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Per-event likelihood under one mixture component.

    The component's smoothed unweighted image, rescaled to integrate to one
    over the sensor, is read out at each event's warped position; values are
    floored at ``epsilon_c`` so events off the cluster's support keep a tiny
    but non-zero likelihood.
    """
    img, wx, wy = _density_image(packet, params, config, counter)
    total = img.total_mass
    values = sample_local(img, wx, wy)
    if total > 0.0:
        values = values / total
    return np.maximum(values, config.epsilon_c)


def mixture_e_step(
    state: MixtureState,
    packet: EventPacket,
    config: SolverConfig,
    counter: OpCounter | None = None,
    likelihoods: np.ndarray | None = None,
) -> MixtureState:
    """Bayes membership refresh followed by the mixing-weight update
    (mixing weight = mean membership)."""
    clusters = state.clusters
    n = packet.n
    n_clusters = clusters.n_clusters
    if likelihoods is None:
        likelihoods = np.zeros((n, n_clusters))
        for j in range(n_clusters):
            if clusters.alive[j]:
                likelihoods[:, j] = component_likelihood(
                    packet, clusters.params[j], config, counter
                )
    weighted = likelihoods * state.mixing
    rowsum = weighted.sum(axis=1, keepdims=True)
    membership = np.zeros_like(weighted)
    np.divide(weighted, rowsum, out=membership, where=rowsum > 0.0)
    uniform_rows = rowsum[:, 0] <= 0.0
    if uniform_rows.any():
        alive_idx = np.flatnonzero(clusters.alive)
        membership[np.ix_(uniform_rows, alive_idx)] = 1.0 / alive_idx.size
    mixing = membership.mean(axis=0)
    return MixtureState(clusters.copy(), membership, mixing)


def _log_likelihood(likelihoods: np.ndarray, mixing: np.ndarray) -> float:
    mix = np.maximum((likelihoods * mixing).sum(axis=1), 1e-300)
    return float(np.log(mix).sum())


def mixture_m_step(
    state: MixtureState,
    packet: EventPacket,
    config: SolverConfig,
    counter: OpCounter | None = None,
    likelihoods: np.ndarray | None = None,
) -> tuple[MixtureState, np.ndarray]:
    """One backtracking ascent step of the total log-likelihood per live
    cluster, updating one component at a time.  Returns the new state plus
    the refreshed likelihood table."""
    clusters = state.clusters.copy()
    n = packet.n
    n_clusters = clusters.n_clusters
    if likelihoods is None:
        likelihoods = np.zeros((n, n_clusters))
        for j in range(n_clusters):
            if clusters.alive[j]:
                likelihoods[:, j] = component_likelihood(
                    packet, clusters.params[j], config, counter
                )
    likelihoods = likelihoods.copy()
    for j in range(n_clusters):
        if not clusters.alive[j]:
            continue
        kappa = displacement_sensitivity(packet, clusters.params[j], config.fd_step)

        def evaluate(candidate: WarpParams, _j=j) -> float:
            col = component_likelihood(packet, candidate, config, counter)
            table = likelihoods.copy()
            table[:, _j] = col
            return _log_likelihood(table, state.mixing)

        new_prm, _, improved = _line_search_step(
            evaluate, clusters.params[j], kappa, config
        )
        if improved:
            clusters.params[j] = new_prm
            likelihoods[:, j] = component_likelihood(packet, new_prm, config, counter)
    return MixtureState(clusters, state.membership, state.mixing), likelihoods


def fuzzy_affinity(
    packet: EventPacket,
    params: WarpParams,
    config: SolverConfig,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Per-event affinity log(1 + image value) under one motion; zero where
    the warped position lands on empty pixels."""
    img, wx, wy = _density_image(packet, params, config, counter)
    return np.log1p(np.maximum(sample_local(img, wx, wy), 0.0))


def fuzzy_e_step(
    state: FuzzyState,
    packet: EventPacket,
    config: SolverConfig,
    counter: OpCounter | None = None,
    affinities: np.ndarray | None = None,
) -> FuzzyState:
    """Inverse-power membership refresh: p_kj proportional to
    affinity^(1/(b-1)); all-zero rows become uniform over live clusters."""
    clusters = state.clusters
    n = packet.n
    n_clusters = clusters.n_clusters
    if affinities is None:
        affinities = np.zeros((n, n_clusters))
        for j in range(n_clusters):
            if clusters.alive[j]:
                affinities[:, j] = fuzzy_affinity(packet, clusters.params[j], config, counter)
    powed = np.zeros_like(affinities)
    alive_idx = np.flatnonzero(clusters.alive)
    powed[:, alive_idx] = affinities[:, alive_idx] ** (1.0 / (state.b - 1.0))
    rowsum = powed.sum(axis=1, keepdims=True)
    membership = np.zeros_like(powed)
    np.divide(powed, rowsum, out=membership, where=rowsum > 0.0)
    zero_rows = rowsum[:, 0] <= 0.0
    if zero_rows.any():
        membership[np.ix_(zero_rows, alive_idx)] = 1.0 / alive_idx.size
    return FuzzyState(clusters.copy(), membership, state.b)


def _run_variant(
    packet: EventPacket,
    n_clusters: int,
    models,
    config: SolverConfig,
    init,
    early_stop: bool,
    counter: OpCounter | None,
    method: str,
    b: float = 2.0,
) -> SegmentationResult:
    if config is None:
        config = SolverConfig()
    if counter is None:
        counter = OpCounter()
    models = _resolve_models(models, n_clusters)
    if init is None:
        clusters, associations = initialize_greedy(packet, n_clusters, models, config, counter)
    else:
        clusters, associations = init[0].copy(), init[1].copy()

    if method == "mixture":
        mixing = associations.mean(axis=0)
        mixing = mixing / mixing.sum()
        state = MixtureState(clusters, associations, mixing)
    else:
        if b <= 1.0:
            raise ValueError("fuzziness b must exceed 1")
        state = FuzzyState(clusters, associations, b)

    contrast_trace = [objective(packet, state.clusters, state.membership, config, counter)]
    own_trace: list[float] = []
    stagnant = 0
    iterations = 0
    converged = False
    table: np.ndarray | None = None
    for _ in range(config.max_iters):
        if method == "mixture":
            state = mixture_e_step(state, packet, config, counter, table)
            state, table = mixture_m_step(state, packet, config, counter)
            own = _log_likelihood(table, state.mixing)
        else:
            state = fuzzy_e_step(state, packet, config, counter, table)
            table = np.zeros_like(state.membership)
            for j in range(state.clusters.n_clusters):
                if state.clusters.alive[j]:
                    kappa = displacement_sensitivity(
                        packet, state.clusters.params[j], config.fd_step
                    )
                    pw = state.membership[:, j] ** state.b

                    def evaluate(candidate: WarpParams, _pw=pw) -> float:
                        return float(
                            (_pw * fuzzy_affinity(packet, candidate, config, counter)).sum()
                        )

                    new_prm, _, improved = _line_search_step(
                        evaluate, state.clusters.params[j], kappa, config
                    )
                    if improved:
                        state.clusters.params[j] = new_prm
                    table[:, j] = fuzzy_affinity(
                        packet, state.clusters.params[j], config, counter
                    )
            own = float(((state.membership**state.b) * table).sum())
        own_trace.append(own)
        contrast_trace.append(
            objective(packet, state.clusters, state.membership, config, counter)
        )
        iterations += 1
        counter.snapshot()
        if early_stop and len(own_trace) >= 2:
            prev = own_trace[-2]
            gain = (own - prev) / max(abs(prev), 1e-12)
            stagnant = stagnant + 1 if gain < config.rel_tol else 0
            if stagnant >= config.convergence_window:
                converged = True
                break

    diagnostics = {
        "method": method,
        "own_trace": np.asarray(own_trace),
        "warp_counts": np.asarray(counter.per_iteration, dtype=np.int64),
    }
    if method == "mixture":
        diagnostics["mixing"] = state.mixing.copy()
    return SegmentationResult(
        clusters=state.clusters,
        associations=state.membership,
        objective_trace=np.asarray(contrast_trace),
        iterations=iterations,
        converged=converged,
        diagnostics=diagnostics,
    )


def segment_mixture(
    packet: EventPacket,
    n_clusters: int,
    models="flow2",
    config: SolverConfig | None = None,
    init=None,
    early_stop: bool = True,
    counter: OpCounter | None = None,
) -> SegmentationResult:
    """Mixture-density clustering of one packet; see module docstring."""
    return _run_variant(
        packet, n_clusters, models, config, init, early_stop, counter, "mixture"
    )


def segment_fuzzy(
    packet: EventPacket,
    n_clusters: int,
    models="flow2",
    config: SolverConfig | None = None,
    init=None,
    b: float = 2.0,
    early_stop: bool = True,
    counter: OpCounter | None = None,
) -> SegmentationResult:
    """Fuzzy-membership clustering of one packet; see module docstring."""
    return _run_variant(
        packet, n_clusters, models, config, init, early_stop, counter, "fuzzy", b=b
    )
