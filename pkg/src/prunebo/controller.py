"""Staged Bayesian-optimization loop: cluster, search, roll back, refine.

The run starts in cluster space (one shared ratio per layer cluster), seeds
itself with Sobol points, then alternates surrogate fits with acquisition
maximization. When the incumbent stalls or the stage budget is spent, the
search space advances to the next stage (a finer cut of the same dendrogram,
ending at one dimension per layer): the history is lifted into the finer
space as the new surrogate's prior evidence and the search box shrinks to
the span of the stage's elite policies.

Everything is deterministic for a given seed and a deterministic
environment; per-trial sub-seeds are derived from the run seed via
``derive_seed`` so independent components never share RNG state.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .acquisition import (
    AcquisitionConfig,
    SearchDomain,
    SobolStream,
    maximize_acquisition,
)
from .clustering import ClusterAssignment, build_dendrogram, cut
from .environment import ExternalEnvError, FlopsAccountant
from .gp import GaussianProcessModel, Hyperparameters, KernelConfig, TrialHistory, TrialRecord, fit
from .layers import NetworkDescriptor, feature_matrix
from .projection import EliteBuffer, scaled_domain, seed_history, to_layer_space

FIT_STREAM = 1
ACQ_STREAM = 2
INIT_STREAM = 3


def derive_seed(root: int, stream: int, index: int) -> int:
    """Stable per-(component, trial) sub-seed of the run seed."""
    return int(np.random.SeedSequence((root, stream, index)).generate_state(1)[0])


@dataclass(frozen=True)
class RunConfig:
    """Knobs of a full optimization run."""

    target_flops_ratio: float = 0.5
    cluster_count: int | None = None  # default: min(8, N)
    stage_plan: tuple[int, ...] = ()
    total_trials: int = 200
    init_samples: int = 10
    stall_trials: int = 20
    stage_trial_cap: int = 100
    seed: int = 0
    rollback: bool = True
    raw_features: bool = False
    domain_floor: float = 0.05
    global_domain_scaling: bool = False
    improvement_tol: float = 1e-4
    kernel: KernelConfig = field(default_factory=KernelConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)

    def __post_init__(self) -> None:
        if not 0.0 < self.target_flops_ratio < 1.0:
            raise ValueError("target_flops_ratio must lie in (0, 1)")
        if self.init_samples < 1 or self.total_trials < 1:
            raise ValueError("trial counts must be positive")
        if not self.stall_trials < self.stage_trial_cap <= self.total_trials:
            raise ValueError("need stall_trials < stage_trial_cap <= total_trials")

    def resolve_clusters(self, num_prunable: int) -> int:
        c = self.cluster_count if self.cluster_count is not None else min(8, num_prunable)
        if not 1 <= c <= num_prunable:
            raise ValueError(f"cluster count {c} outside [1, {num_prunable}]")
        return c

    def stage_counts(self, num_prunable: int) -> list[int]:
        c = self.resolve_clusters(num_prunable)
        if not self.rollback or c == num_prunable:
            return [c]
        for b in self.stage_plan:
            if not c < b < num_prunable:
                raise ValueError(
                    f"bridge stage {b} must lie strictly between {c} and {num_prunable}"
                )
        if list(self.stage_plan) != sorted(set(self.stage_plan)):
            raise ValueError("stage plan must be strictly increasing")
        return [c, *self.stage_plan, num_prunable]


@dataclass
class StageState:
    """Mutable per-stage search state."""

    assignment: ClusterAssignment
    domain: SearchDomain
    history: TrialHistory
    elites: EliteBuffer
    sobol: SobolStream
    accountant: FlopsAccountant
    init_shift: np.ndarray
    trials_in_stage: int = 0
    last_improvement: int = 0  # stage-trial index of the last tolerated gain
    cached_hypers: Hyperparameters | None = None
    fitted_at: int = 0


@dataclass
class RunState:
    """Cross-stage progress of one run."""

    stage_index: int
    stages_total: int
    current: StageState
    trials_done: int = 0
    best_objective: float = -np.inf
    best_policy_layers: np.ndarray | None = None
    best_flops_ratio: float = float("nan")

    @property
    def at_final_stage(self) -> bool:
        return self.stage_index >= self.stages_total - 1


def _stage_shift(seed: int, stage_index: int, dimension: int) -> np.ndarray:
    """Per-seed rotation of the stage's quasi-random init design."""
    rng = np.random.default_rng(derive_seed(seed, INIT_STREAM, stage_index))
    return rng.random(dimension)


def _init_point(stage: StageState) -> np.ndarray:
    """Next rotated Sobol point of the stage, mapped into its box."""
    unit = (stage.sobol.take(1)[0] + stage.init_shift) % 1.0
    return stage.domain.from_unit(unit)


def should_rollback(state: RunState, config: RunConfig) -> bool:
    """True when the current stage stalled or exhausted its trial budget."""
    stage = state.current
    stalled = stage.trials_in_stage - stage.last_improvement > config.stall_trials
    return stalled or stage.trials_in_stage >= config.stage_trial_cap


@dataclass(frozen=True)
class TrialLogEntry:
    trial: int
    stage: int
    clusters: int
    policy: tuple[float, ...]
    objective: float
    flops_ratio: float
    feasible: bool
    best_so_far: float


@dataclass(frozen=True)
class StageTransition:
    trial: int
    from_clusters: int
    to_clusters: int
    domain_lo: tuple[float, ...]
    domain_hi: tuple[float, ...]


@dataclass
class RunReport:
    best_policy: np.ndarray | None
    best_objective: float
    best_flops_ratio: float
    trials: list[TrialLogEntry]
    transitions: list[StageTransition]
    trial_seconds: list[float]
    config: dict
    seed: int
    status: str = "ok"

    def best_so_far_curve(self) -> list[float]:
        return [t.best_so_far for t in self.trials]


class _Runner:
    def __init__(self, net: NetworkDescriptor, env, config: RunConfig):
        self.net = net
        self.env = env
        self.config = config
        feats = feature_matrix(net, normalize=not config.raw_features)
        self.dendrogram = build_dendrogram(feats)
        self.stage_counts = config.stage_counts(net.num_prunable)
        self.assignments = [cut(self.dendrogram, c) for c in self.stage_counts]
        first = self.assignments[0]
        self.state = RunState(
            stage_index=0,
            stages_total=len(self.assignments),
            current=StageState(
                assignment=first,
                domain=SearchDomain.unit(first.num_clusters, config.domain_floor),
                history=TrialHistory(),
                elites=EliteBuffer(),
                sobol=SobolStream(first.num_clusters),
                accountant=FlopsAccountant(net, first),
                init_shift=_stage_shift(config.seed, 0, first.num_clusters),
            ),
        )
        self.trials: list[TrialLogEntry] = []
        self.transitions: list[StageTransition] = []
        self.trial_seconds: list[float] = []

    def _evaluate_candidate(self, candidate: np.ndarray, started: float) -> None:
        state, stage, config = self.state, self.state.current, self.config
        repaired = stage.accountant.repair_batch(
            candidate[None, :], config.target_flops_ratio, stage.domain
        )[0]
        layer_policy = to_layer_space(repaired, stage.assignment)
        evaluation = self.env.evaluate(self.net, layer_policy, config.target_flops_ratio)
        stage.history.append(
            TrialRecord(
                policy=repaired,
                objective=evaluation.objective,
                feasible=evaluation.feasible,
                flops_ratio=evaluation.flops_ratio,
                timestamp=state.trials_done,
            )
        )
        stage.trials_in_stage += 1
        if evaluation.feasible:
            stage.elites.offer(repaired, evaluation.objective)
            if evaluation.objective > state.best_objective + config.improvement_tol:
                stage.last_improvement = stage.trials_in_stage
            if evaluation.objective > state.best_objective:
                state.best_objective = evaluation.objective
                state.best_policy_layers = layer_policy
                state.best_flops_ratio = evaluation.flops_ratio
        state.trials_done += 1
        self.trials.append(
            TrialLogEntry(
                trial=state.trials_done,
                stage=state.stage_index,
                clusters=stage.assignment.num_clusters,
                policy=tuple(float(v) for v in repaired),
                objective=evaluation.objective,
                flops_ratio=evaluation.flops_ratio,
                feasible=evaluation.feasible,
                best_so_far=state.best_objective,
            )
        )
        self.trial_seconds.append(time.perf_counter() - started)

    def _fit_surrogate(self) -> GaussianProcessModel:
        stage, kernel = self.state.current, self.config.kernel
        seed = derive_seed(self.config.seed, FIT_STREAM, self.state.trials_done)
        reoptimize = kernel.optimize and (
            stage.cached_hypers is None
            or len(stage.history) - stage.fitted_at >= kernel.refit_period
        )
        if reoptimize:
            model = fit(stage.history, kernel, seed=seed)
            stage.cached_hypers = model.hypers
            stage.fitted_at = len(stage.history)
        else:
            model = fit(stage.history, kernel, seed=seed, hypers=stage.cached_hypers)
        return model

    def _advance_stage(self) -> None:
        state, config = self.state, self.config
        old = state.current
        new_assignment = self.assignments[state.stage_index + 1]
        domain = scaled_domain(
            old.elites,
            old.assignment,
            new_assignment,
            floor=config.domain_floor,
            global_box=config.global_domain_scaling,
        )
        state.current = StageState(
            assignment=new_assignment,
            domain=domain,
            history=seed_history(old.history, old.assignment, new_assignment),
            elites=EliteBuffer(),
            sobol=SobolStream(new_assignment.num_clusters),
            accountant=FlopsAccountant(self.net, new_assignment),
            init_shift=_stage_shift(
                config.seed, state.stage_index + 1, new_assignment.num_clusters
            ),
        )
        state.stage_index += 1
        self.transitions.append(
            StageTransition(
                trial=state.trials_done,
                from_clusters=old.assignment.num_clusters,
                to_clusters=new_assignment.num_clusters,
                domain_lo=tuple(float(v) for v in domain.lo),
                domain_hi=tuple(float(v) for v in domain.hi),
            )
        )
        # fresh quasi-random coverage of the scaled box before EI resumes
        topup = max(1, config.init_samples // 4)
        for _ in range(topup):
            if state.trials_done >= config.total_trials:
                break
            started = time.perf_counter()
            self._evaluate_candidate(_init_point(state.current), started)

    def run(self) -> RunReport:
        state, config = self.state, self.config
        status = "ok"
        try:
            for _ in range(config.init_samples):
                if state.trials_done >= config.total_trials:
                    break
                started = time.perf_counter()
                self._evaluate_candidate(_init_point(state.current), started)
            while state.trials_done < config.total_trials:
                if not state.at_final_stage and should_rollback(state, config):
                    self._advance_stage()
                    continue
                started = time.perf_counter()
                model = self._fit_surrogate()
                records = state.current.history.records
                feasible = [r.objective for r in records if r.feasible]
                incumbent = max(feasible) if feasible else max(r.objective for r in records)
                stage = state.current

                def repair(points: np.ndarray) -> np.ndarray:
                    return stage.accountant.repair_batch(
                        points, config.target_flops_ratio, stage.domain
                    )

                candidate = maximize_acquisition(
                    model,
                    stage.domain,
                    incumbent,
                    seed=derive_seed(config.seed, ACQ_STREAM, state.trials_done),
                    config=config.acquisition,
                    repair=repair,
                )
                self._evaluate_candidate(candidate, started)
        except ExternalEnvError as exc:
            status = f"error: {exc}"
        return RunReport(
            best_policy=state.best_policy_layers,
            best_objective=state.best_objective,
            best_flops_ratio=state.best_flops_ratio,
            trials=self.trials,
            transitions=self.transitions,
            trial_seconds=self.trial_seconds,
            config=asdict(config),
            seed=config.seed,
            status=status,
        )


def run(net: NetworkDescriptor, env, config: RunConfig) -> RunReport:
    """Execute the full flow and return the report.

    ``env`` is anything exposing ``evaluate(net, policy, target_ratio)``.
    Deterministic for a given ``config.seed`` and deterministic environment.
    """
    return _Runner(net, env, config).run()


def naive_config(config: RunConfig, num_prunable: int) -> RunConfig:
    """Same run without dimension reduction: one cluster per layer."""
    return replace(config, cluster_count=num_prunable, stage_plan=(), rollback=False)


def cluster_only_config(config: RunConfig) -> RunConfig:
    """Same run that never leaves cluster space."""
    return replace(config, rollback=False)
