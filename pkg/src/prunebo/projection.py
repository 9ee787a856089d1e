"""Mappings between cluster-space and layer-space policies.

Rolling the search back to a finer space needs three pieces: lifting
policies (each finer cluster inherits its parent's ratio), re-seeding the
trial history so the next surrogate starts from the coarse-stage evidence,
and shrinking the new search box to the span of the elite policies seen so
far. All of it relies on cuts of one dendrogram being nested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import SearchDomain
from .clustering import ClusterAssignment, Dendrogram, cut
from .gp import TrialHistory, TrialRecord

DOMAIN_FLOOR = 0.05
ELITE_CAPACITY = 10


def singleton_assignment(num_leaves: int) -> ClusterAssignment:
    """The finest cut: every prunable layer is its own cluster."""
    return ClusterAssignment(
        num_clusters=num_leaves, labels=tuple(range(num_leaves))
    )


def lift(
    policy: np.ndarray,
    from_assignment: ClusterAssignment,
    to_assignment: ClusterAssignment,
) -> np.ndarray:
    """Re-express a coarse-space policy in a nested finer space.

    Each cluster of ``to_assignment`` takes the value of the
    ``from_assignment`` cluster containing it, so the induced per-layer
    ratios are unchanged.
    """
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (from_assignment.num_clusters,):
        raise ValueError(
            f"policy has {policy.shape} entries, expected "
            f"{from_assignment.num_clusters}"
        )
    parent = to_assignment.parent_map(from_assignment)
    return np.array(
        [policy[parent[g]] for g in range(to_assignment.num_clusters)], dtype=float
    )


def to_layer_space(policy: np.ndarray, assignment: ClusterAssignment) -> np.ndarray:
    """Per-layer ratio vector induced by a cluster-space policy."""
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (assignment.num_clusters,):
        raise ValueError("policy does not match assignment cluster count")
    return policy[np.array(assignment.labels)]


def seed_history(
    history: TrialHistory,
    from_assignment: ClusterAssignment,
    to_assignment: ClusterAssignment,
) -> TrialHistory:
    """History with every policy lifted; objectives, metadata, order kept."""
    seeded = TrialHistory()
    for record in history.records:
        seeded.append(
            TrialRecord(
                policy=lift(record.policy, from_assignment, to_assignment),
                objective=record.objective,
                feasible=record.feasible,
                flops_ratio=record.flops_ratio,
                timestamp=record.timestamp,
            )
        )
    return seeded


@dataclass
class EliteBuffer:
    """The highest-objective feasible policies of the current stage."""

    capacity: int = ELITE_CAPACITY
    _entries: list[tuple[float, int, np.ndarray]] = field(default_factory=list)
    _counter: int = 0

    def __len__(self) -> int:
        return len(self._entries)

    def offer(self, policy: np.ndarray, objective: float) -> None:
        self._entries.append((float(objective), self._counter, np.asarray(policy, float)))
        self._counter += 1
        self._entries.sort(key=lambda e: (-e[0], e[1]))
        del self._entries[self.capacity :]

    def policies(self) -> np.ndarray:
        if not self._entries:
            raise ValueError("elite buffer is empty")
        return np.array([e[2] for e in self._entries])

    def objectives(self) -> list[float]:
        return [e[0] for e in self._entries]


def scaled_domain(
    buffer: EliteBuffer,
    from_assignment: ClusterAssignment,
    to_assignment: ClusterAssignment,
    floor: float = DOMAIN_FLOOR,
    global_box: bool = False,
) -> SearchDomain:
    """Post-rollback search box spanned by the elite policies.

    Per-cluster reading (default): cluster ``j`` of the coarse space
    contributes ``[min_i elite_i[j], max_i elite_i[j]]`` and every finer
    cluster inherits its parent's interval. ``global_box=True`` instead uses
    one interval spanning all entries of all elites for every dimension.
    Lower bounds are clamped to ``floor`` so no layer can collapse to zero
    channels.
    """
    elites = buffer.policies()
    if elites.shape[1] != from_assignment.num_clusters:
        raise ValueError("elite policies do not match the coarse assignment")
    if global_box:
        lo_c = np.full(from_assignment.num_clusters, float(elites.min()))
        hi_c = np.full(from_assignment.num_clusters, float(elites.max()))
    else:
        lo_c = elites.min(axis=0)
        hi_c = elites.max(axis=0)
    lo_c = np.maximum(lo_c, floor)
    hi_c = np.maximum(hi_c, lo_c)
    parent = to_assignment.parent_map(from_assignment)
    order = np.array([parent[g] for g in range(to_assignment.num_clusters)])
    return SearchDomain(lo=lo_c[order], hi=hi_c[order])


@dataclass(frozen=True)
class StagePlan:
    """Strictly increasing cluster counts ending at N, with their cuts."""

    stages: tuple[int, ...]
    assignments: tuple[ClusterAssignment, ...]

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("stage plan needs at least one stage")
        if list(self.stages) != sorted(set(self.stages)):
            raise ValueError("stage cluster counts must be strictly increasing")
        if len(self.stages) != len(self.assignments):
            raise ValueError("one assignment per stage required")

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @classmethod
    def from_dendrogram(cls, dendro: Dendrogram, counts: list[int]) -> "StagePlan":
        n = dendro.num_leaves
        for c in counts:
            if not 1 <= c <= n:
                raise ValueError(f"stage count {c} outside [1, {n}]")
        if counts[-1] != n:
            counts = list(counts) + [n]
        return cls(
            stages=tuple(counts),
            assignments=tuple(cut(dendro, c) for c in counts),
        )
