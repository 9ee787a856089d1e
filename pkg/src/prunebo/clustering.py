"""Bottom-up layer clustering under the Ward merge criterion.

The full merge history is recorded as a dendrogram so that any cluster
count can be cut from one clustering pass; cuts of the same dendrogram are
nested by construction, which is what makes staged search-space recovery
(bridge stages) consistent.

Merging is done literally: every round recomputes all pairwise cluster
distances from the current members and merges the closest pair, breaking
exact ties by the lowest (i, j) scan position. No Lance-Williams update is
used; at the layer counts involved the O(N^3) scan is irrelevant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import FeatureMatrix


@dataclass(frozen=True)
class Dendrogram:
    """Complete merge history over ``num_leaves`` feature rows.

    Leaves are numbered ``0..N-1`` (prunable-layer slots); the t-th merge
    creates cluster id ``N + t``. ``merges`` holds ``(id_a, id_b, distance)``
    tuples in merge order.
    """

    num_leaves: int
    merges: tuple[tuple[int, int, float], ...]

    def cut(self, clusters: int) -> "ClusterAssignment":
        return cut(self, clusters)


@dataclass(frozen=True)
class ClusterAssignment:
    """A partition of the ``N`` leaves into ``num_clusters`` groups.

    ``labels[slot]`` is the cluster id of the slot-th prunable layer.
    Ids are canonical: cluster 0 contains the first layer, and ids increase
    in order of each cluster's first layer.
    """

    num_clusters: int
    labels: tuple[int, ...]

    @property
    def num_leaves(self) -> int:
        return len(self.labels)

    def members(self, cluster_id: int) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.labels) if c == cluster_id)

    def refines(self, coarser: "ClusterAssignment") -> bool:
        """True when every cluster here sits inside one cluster of ``coarser``."""
        if coarser.num_leaves != self.num_leaves:
            return False
        parent: dict[int, int] = {}
        for fine, coarse in zip(self.labels, coarser.labels):
            if parent.setdefault(fine, coarse) != coarse:
                return False
        return True

    def parent_map(self, coarser: "ClusterAssignment") -> dict[int, int]:
        """Map of each cluster id here to its containing cluster in ``coarser``."""
        if not self.refines(coarser):
            raise ValueError("assignments are not nested")
        return {
            fine: coarse for fine, coarse in zip(self.labels, coarser.labels)
        }


def ward_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Merge cost between two clusters of feature rows.

    Computes ``n_a * n_b / (n_a + n_b) * sum_v (mean_a(v) - mean_b(v))^2``,
    the increase in total within-cluster variance caused by merging.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("ward_distance requires nonempty clusters")
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensionality mismatch")
    n_a, n_b = a.shape[0], b.shape[0]
    diff = a.mean(axis=0) - b.mean(axis=0)
    return float(n_a * n_b / (n_a + n_b) * np.dot(diff, diff))


def _as_rows(features: FeatureMatrix | np.ndarray) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return np.asarray(features.values, dtype=float)
    rows = np.asarray(features, dtype=float)
    if rows.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    return rows


def build_dendrogram(features: FeatureMatrix | np.ndarray) -> Dendrogram:
    """Run the bottom-up merge loop to a single cluster, recording each merge.

    Every round recomputes the pairwise merge costs of the currently active
    clusters from their members and merges the strictly smallest pair; among
    exactly equal costs the lowest scan position (i, j) wins, which fixes the
    result deterministically.
    """
    rows = _as_rows(features)
    n = rows.shape[0]
    if n < 1:
        raise ValueError("need at least one feature row")
    ids = list(range(n))
    sums = rows.copy()
    counts = np.ones(n)
    merges: list[tuple[int, int, float]] = []
    while len(ids) > 1:
        m = len(ids)
        means = sums / counts[:, None]
        sq = np.sum(
            (means[:, None, :] - means[None, :, :]) ** 2, axis=2
        )
        weight = counts[:, None] * counts[None, :] / (counts[:, None] + counts[None, :])
        dist = weight * sq
        dist[np.tril_indices(m)] = np.inf
        best = dist.min()
        alpha, beta = map(int, np.argwhere(dist == best)[0])
        merges.append((ids[alpha], ids[beta], float(best)))
        sums[alpha] += sums[beta]
        counts[alpha] += counts[beta]
        ids[alpha] = n + len(merges) - 1
        sums = np.delete(sums, beta, axis=0)
        counts = np.delete(counts, beta)
        del ids[beta]
    return Dendrogram(num_leaves=n, merges=tuple(merges))


def cut(dendro: Dendrogram, clusters: int) -> ClusterAssignment:
    """Partition the leaves into exactly ``clusters`` groups.

    Replays the first ``N - clusters`` merges, i.e. undoes the last
    ``clusters - 1``; any two cuts of one dendrogram are therefore nested.
    """
    n = dendro.num_leaves
    if not 1 <= clusters <= n:
        raise ValueError(f"cluster count {clusters} outside [1, {n}]")
    group_of = {leaf: leaf for leaf in range(n)}
    members: dict[int, list[int]] = {leaf: [leaf] for leaf in range(n)}
    for t in range(n - clusters):
        id_a, id_b, _ = dendro.merges[t]
        merged = n + t
        joined = members.pop(id_a) + members.pop(id_b)
        members[merged] = joined
        for leaf in joined:
            group_of[leaf] = merged
    canonical: dict[int, int] = {}
    labels = []
    for leaf in range(n):
        group = group_of[leaf]
        if group not in canonical:
            canonical[group] = len(canonical)
        labels.append(canonical[group])
    return ClusterAssignment(num_clusters=clusters, labels=tuple(labels))


def dendrogram_lines(dendro: Dendrogram) -> list[str]:
    """Merge list in a plottable text form: ``<id_a> <id_b> <distance>``."""
    return [f"{a} {b} {d:.17g}" for a, b, d in dendro.merges]


def assignment_lines(
    assignment: ClusterAssignment, layer_indices: tuple[int, ...] | None = None
) -> list[str]:
    """``<layer-index> <cluster-id>`` pairs, one per prunable layer."""
    if layer_indices is None:
        layer_indices = tuple(range(assignment.num_leaves))
    return [
        f"{layer} {cluster}"
        for layer, cluster in zip(layer_indices, assignment.labels)
    ]
