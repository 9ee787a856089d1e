"""Black-box evaluation of layer-space pruning policies.

Two interchangeable evaluators are provided (anything with the same
``evaluate(net, policy, target_ratio)`` shape works):

* :class:`SyntheticEnvironment` - a deterministic accuracy surrogate for
  desk-scale experiments. The objective is a base accuracy minus per-layer
  pruning penalties ``s_i * (1 - p_i)^g_i`` and pairwise interaction terms,
  plus optional evaluation noise that is a pure function of (spec seed,
  policy), so reruns reproduce it exactly.
* :class:`ExternalEnvironment` - adapter to a real pruning backend run as a
  child process speaking a line protocol: one request line
  ``p_1,...,p_N,target_ratio`` on stdin, one reply line
  ``objective,flops_ratio`` on stdout per evaluation.

``project_feasible`` repairs policies that exceed the FLOPs budget by
uniform down-scaling with a bisection on the scale factor, staying inside
the active search box.
"""

from __future__ import annotations

import hashlib
import json
import math
import select
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acquisition import SearchDomain
from .clustering import ClusterAssignment
from .layers import NetworkDescriptor, flops_ratio, validate_policy

FEASIBILITY_TOL = 1e-9
REPAIR_TOL = 1e-6


class ExternalEnvError(RuntimeError):
    """Protocol failure of an external evaluator; carries the raw payload."""

    def __init__(self, message: str, payload: str = ""):
        super().__init__(message if not payload else f"{message} (payload: {payload!r})")
        self.payload = payload


class InfeasibleDomainError(ValueError):
    """No point of the search box satisfies the FLOPs budget."""


@dataclass(frozen=True)
class Evaluation:
    objective: float
    flops_ratio: float
    feasible: bool


@dataclass(frozen=True)
class SyntheticEnvSpec:
    """Parameters of the synthetic accuracy surrogate."""

    name: str
    base_accuracy: float
    sensitivity: tuple[float, ...]
    exponent: tuple[float, ...]
    interactions: tuple[tuple[int, int, float], ...]
    noise: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.base_accuracy < 1.0:
            raise ValueError("base_accuracy must lie in (0, 1)")
        if len(self.sensitivity) != len(self.exponent):
            raise ValueError("sensitivity and exponent lengths differ")
        if any(s < 0.0 for s in self.sensitivity):
            raise ValueError("sensitivities must be nonnegative")
        if any(g < 1.0 for g in self.exponent):
            raise ValueError("exponents must be >= 1")
        if self.noise < 0.0:
            raise ValueError("noise must be nonnegative")
        d = len(self.sensitivity)
        for i, j, _ in self.interactions:
            if not (0 <= i < d and 0 <= j < d and i != j):
                raise ValueError(f"bad interaction pair ({i}, {j})")

    @property
    def dimension(self) -> int:
        return len(self.sensitivity)

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "base_accuracy": self.base_accuracy,
                "sensitivity": list(self.sensitivity),
                "exponent": list(self.exponent),
                "interactions": [list(t) for t in self.interactions],
                "noise": self.noise,
                "seed": self.seed,
            },
            indent=2,
        )


def load_env_spec(path: str | Path) -> SyntheticEnvSpec:
    raw = json.loads(Path(path).read_text())
    try:
        return SyntheticEnvSpec(
            name=raw["name"],
            base_accuracy=float(raw["base_accuracy"]),
            sensitivity=tuple(float(s) for s in raw["sensitivity"]),
            exponent=tuple(float(g) for g in raw["exponent"]),
            interactions=tuple(
                (int(i), int(j), float(w)) for i, j, w in raw.get("interactions", [])
            ),
            noise=float(raw.get("noise", 0.0)),
            seed=int(raw.get("seed", 0)),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing spec key {exc}") from None


def _policy_noise(seed: int, policy: np.ndarray, scale: float) -> float:
    """Deterministic evaluation noise keyed by (seed, policy bytes)."""
    if scale == 0.0:
        return 0.0
    digest = hashlib.blake2b(policy.tobytes(), digest_size=8)
    digest.update(int(seed).to_bytes(8, "little", signed=True))
    rng = np.random.default_rng(int.from_bytes(digest.digest(), "little"))
    return float(rng.normal(0.0, scale))


class SyntheticEnvironment:
    """Deterministic pruning-quality surrogate driven by a spec."""

    def __init__(self, spec: SyntheticEnvSpec):
        self.spec = spec
        self._s = np.array(spec.sensitivity)
        self._g = np.array(spec.exponent)

    def evaluate(
        self, net: NetworkDescriptor, policy: np.ndarray, target_ratio: float
    ) -> Evaluation:
        policy = validate_policy(net, policy)
        if self.spec.dimension != net.num_prunable:
            raise ValueError(
                f"spec dimension {self.spec.dimension} does not match "
                f"{net.num_prunable} prunable layers"
            )
        gap = 1.0 - policy
        value = self.spec.base_accuracy - float(np.sum(self._s * gap**self._g))
        for i, j, w in self.spec.interactions:
            value -= w * gap[i] * gap[j]
        value += _policy_noise(self.spec.seed, policy, self.spec.noise)
        ratio = flops_ratio(net, policy)
        return Evaluation(
            objective=float(min(max(value, 0.0), 1.0)),
            flops_ratio=ratio,
            feasible=ratio <= target_ratio + FEASIBILITY_TOL,
        )


class ExternalEnvironment:
    """Line-protocol bridge to a pruning backend child process.

    The command is launched once and kept alive; requests are strictly
    serialized (one in flight). Malformed replies, timeouts and early exits
    raise :class:`ExternalEnvError` with whatever the child produced.
    """

    def __init__(self, command: str, timeout: float = 300.0):
        self.command = command
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def _read_reply(self, proc: subprocess.Popen) -> str:
        ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
        if not ready:
            raise ExternalEnvError(
                f"external evaluator timed out after {self.timeout}s"
            )
        line = proc.stdout.readline()
        if not line:
            err = proc.stderr.read() if proc.stderr else ""
            raise ExternalEnvError(
                f"external evaluator exited (code {proc.poll()})", err.strip()
            )
        return line.strip()

    def evaluate(
        self, net: NetworkDescriptor, policy: np.ndarray, target_ratio: float
    ) -> Evaluation:
        policy = validate_policy(net, policy)
        proc = self._ensure_process()
        request = ",".join(f"{p:.17g}" for p in policy) + f",{target_ratio:.17g}\n"
        try:
            proc.stdin.write(request)
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ExternalEnvError(f"external evaluator pipe failed: {exc}") from exc
        reply = self._read_reply(proc)
        parts = reply.split(",")
        if len(parts) != 2:
            raise ExternalEnvError("expected reply 'objective,flops_ratio'", reply)
        try:
            objective, ratio = float(parts[0]), float(parts[1])
        except ValueError:
            raise ExternalEnvError("non-numeric reply fields", reply) from None
        if not (math.isfinite(objective) and math.isfinite(ratio)):
            raise ExternalEnvError("non-finite reply fields", reply)
        return Evaluation(
            objective=objective,
            flops_ratio=ratio,
            feasible=ratio <= target_ratio + FEASIBILITY_TOL,
        )

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None


class FlopsAccountant:
    """Vectorized FLOPs ratios and feasibility repair for policy batches.

    Precomputes, per layer, its FLOPs weight and the policy slots scaling its
    output and input widths (via producer links), so a batch of policies in
    either layer space or a given cluster space evaluates with two gathers
    and a dot product. Used on the acquisition hot path where thousands of
    candidates are repaired per trial.
    """

    def __init__(self, net: NetworkDescriptor, assignment: ClusterAssignment | None = None):
        self.net = net
        slot_of = {idx: slot for slot, idx in enumerate(net.prunable_indices)}
        if assignment is not None:
            if assignment.num_leaves != net.num_prunable:
                raise ValueError("assignment does not match the network")
            dim = assignment.num_clusters
            entry_of = {
                idx: assignment.labels[slot] for idx, slot in slot_of.items()
            }
        else:
            dim = net.num_prunable
            entry_of = dict(slot_of)
        self.dimension = dim
        ones_col = dim  # augmented column holding the constant 1.0
        out_map, in_map, weights = [], [], []
        for layer in net.layers:
            out_map.append(entry_of.get(layer.index, ones_col))
            producer = layer.producer
            in_map.append(ones_col if producer is None else entry_of.get(producer, ones_col))
            weights.append(float(layer.flops))
        self._out = np.array(out_map)
        self._in = np.array(in_map)
        self._w = np.array(weights)
        self._total = float(np.sum(self._w))

    def ratios(self, policies: np.ndarray) -> np.ndarray:
        """FLOPs ratio of each row of a (batch, dimension) policy array."""
        policies = np.atleast_2d(np.asarray(policies, dtype=float))
        if policies.shape[1] != self.dimension:
            raise ValueError(
                f"policy dimension {policies.shape[1]} != {self.dimension}"
            )
        padded = np.concatenate(
            [policies, np.ones((policies.shape[0], 1))], axis=1
        )
        return (padded[:, self._out] * padded[:, self._in]) @ self._w / self._total

    def repair_batch(
        self, policies: np.ndarray, target_ratio: float, domain: SearchDomain
    ) -> np.ndarray:
        """Repaired copies of the rows whose FLOPs ratio exceeds the budget.

        Uniform down-scaling per row, clamped into the box, with the scale
        found by a shared vectorized bisection. Rows already feasible pass
        through untouched.
        """
        policies = np.atleast_2d(np.asarray(policies, dtype=float))
        ratios = self.ratios(policies)
        needs = ratios > target_ratio + FEASIBILITY_TOL
        if not np.any(needs):
            return policies
        if self.ratios(domain.lo[None, :])[0] > target_ratio + FEASIBILITY_TOL:
            raise InfeasibleDomainError(
                f"target ratio {target_ratio} unreachable in domain"
            )
        bad = policies[needs]
        lo = np.zeros(len(bad))
        hi = np.ones(len(bad))
        steps = int(np.ceil(-np.log2(REPAIR_TOL)))
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            feasible = (
                self.ratios(domain.clip(mid[:, None] * bad)) <= target_ratio
            )
            lo = np.where(feasible, mid, lo)
            hi = np.where(feasible, hi, mid)
        out = policies.copy()
        out[needs] = domain.clip(lo[:, None] * bad)
        return out


def make_block_spec(
    name: str,
    block_labels: list[int],
    base_accuracy: float = 0.9,
    noise: float = 0.002,
    seed: int = 0,
    sensitivity_range: tuple[float, float] = (0.01, 0.06),
    exponent_range: tuple[float, float] = (1.3, 2.8),
    jitter: float = 0.1,
    interaction_weight: float = 0.004,
) -> SyntheticEnvSpec:
    """Spec whose layers share sensitivities within structural blocks.

    Layers with the same block label draw one (sensitivity, exponent) pair,
    perturbed per layer by up to ``jitter`` relative; adjacent same-block
    layers get a small interaction term. Optimal budgets are then nearly
    uniform inside each block, the regime where searching one shared ratio
    per block loses almost nothing.
    """
    rng = np.random.default_rng(seed)
    blocks = sorted(set(block_labels))
    base_s = {b: rng.uniform(*sensitivity_range) for b in blocks}
    base_g = {b: rng.uniform(*exponent_range) for b in blocks}
    sens, expo = [], []
    for label in block_labels:
        sens.append(base_s[label] * (1.0 + rng.uniform(-jitter, jitter)))
        expo.append(max(1.0, base_g[label] * (1.0 + rng.uniform(-jitter, jitter))))
    interactions = []
    for i in range(len(block_labels) - 1):
        if block_labels[i] == block_labels[i + 1]:
            interactions.append((i, i + 1, float(rng.uniform(0.0, interaction_weight))))
    return SyntheticEnvSpec(
        name=name,
        base_accuracy=base_accuracy,
        sensitivity=tuple(sens),
        exponent=tuple(expo),
        interactions=tuple(interactions),
        noise=noise,
        seed=seed,
    )


def make_uncorrelated_spec(
    name: str,
    dimension: int,
    base_accuracy: float = 0.9,
    noise: float = 0.002,
    seed: int = 0,
    sensitivity_range: tuple[float, float] = (0.002, 0.09),
    exponent_range: tuple[float, float] = (1.1, 3.5),
    interaction_pairs: int | None = None,
    interaction_weight: float = 0.005,
) -> SyntheticEnvSpec:
    """Adversarial spec: per-layer sensitivities with no block structure.

    Structurally similar layers then have unrelated redundancy, so sharing
    one ratio per cluster leaves accuracy on the table and the later
    fine-grained stage has real work to do.
    """
    rng = np.random.default_rng(seed)
    sens = rng.uniform(*sensitivity_range, size=dimension)
    expo = rng.uniform(*exponent_range, size=dimension)
    pairs = dimension // 2 if interaction_pairs is None else interaction_pairs
    interactions = []
    seen = set()
    while len(interactions) < pairs:
        i, j = sorted(map(int, rng.choice(dimension, size=2, replace=False)))
        if (i, j) in seen:
            continue
        seen.add((i, j))
        interactions.append((i, j, float(rng.uniform(0.0, interaction_weight))))
    return SyntheticEnvSpec(
        name=name,
        base_accuracy=base_accuracy,
        sensitivity=tuple(float(s) for s in sens),
        exponent=tuple(float(g) for g in expo),
        interactions=tuple(interactions),
        noise=noise,
        seed=seed,
    )


def project_feasible(
    net: NetworkDescriptor,
    policy: np.ndarray,
    target_ratio: float,
    domain: SearchDomain,
    assignment: ClusterAssignment | None = None,
) -> np.ndarray:
    """Repair a policy to satisfy the FLOPs budget, staying inside the box.

    Already-feasible policies come back unchanged. Otherwise all entries are
    scaled down by a common factor, clamped into the box, with the factor
    found by bisection (tolerance ``1e-6``); uniform scaling keeps the
    acquisition's chosen direction. Raises :class:`InfeasibleDomainError`
    when even the box's lower corner exceeds the budget.

    ``assignment`` marks ``policy`` (and the box) as cluster-space; FLOPs are
    then measured on the induced per-layer ratios.
    """
    policy = np.asarray(policy, dtype=float)
    accountant = FlopsAccountant(net, assignment)
    return accountant.repair_batch(policy[None, :], target_ratio, domain)[0]
