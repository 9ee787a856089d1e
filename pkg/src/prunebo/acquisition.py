"""Expected improvement and its maximization over a box search domain.

Candidate generation uses an unscrambled Sobol sequence (Joe-Kuo direction
numbers, Gray-code order). Streams start at sequence index 1: the origin
point of the raw sequence is skipped because preservation ratios must be
strictly positive. Maximization scores a Cranley-Patterson-rotated batch of
Sobol candidates and polishes the best few with a bounded coordinate
pattern search; everything is deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import backend
from .gp import GaussianProcessModel
from .sobol_data import JOE_KUO_6, MAX_DIMENSION

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class SearchDomain:
    """Per-dimension box [lo, hi] within (0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("domain bounds must be 1-D and equal length")
        if np.any(lo <= 0.0) or np.any(hi > 1.0) or np.any(lo > hi):
            raise ValueError("domain requires 0 < lo <= hi <= 1")

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @classmethod
    def unit(cls, dimension: int, floor: float = 0.05) -> "SearchDomain":
        return cls(np.full(dimension, floor), np.ones(dimension))

    def contains(self, point: np.ndarray, tol: float = 1e-12) -> bool:
        point = np.asarray(point, dtype=float)
        return bool(
            np.all(point >= self.lo - tol) and np.all(point <= self.hi + tol)
        )

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lo, self.hi)

    def from_unit(self, unit_points: np.ndarray) -> np.ndarray:
        """Affine map of [0,1) points into the box; 0 lands exactly on lo."""
        mapped = self.lo + np.asarray(unit_points, dtype=float) * (self.hi - self.lo)
        return np.clip(mapped, self.lo, self.hi)


@lru_cache(maxsize=None)
def _direction_matrix(dimension: int) -> np.ndarray:
    """(d, 32) uint64 direction integers scaled to 32 fractional bits."""
    if not 1 <= dimension <= MAX_DIMENSION:
        raise ValueError(f"Sobol dimension must be in [1, {MAX_DIMENSION}]")
    bits = backend.SOBOL_BITS
    v = np.zeros((dimension, bits), dtype=np.uint64)
    for j in range(dimension):
        poly, m_init = JOE_KUO_6[j]
        degree = poly.bit_length() - 1
        if degree == 0:
            m = [1] * bits
        else:
            coeffs = (poly - (1 << degree) - 1) >> 1
            m = list(m_init)
            for k in range(degree, bits):
                new = m[k - degree] ^ (m[k - degree] << degree)
                for i in range(1, degree):
                    if (coeffs >> (degree - 1 - i)) & 1:
                        new ^= m[k - i] << i
                m.append(new)
        for k in range(bits):
            v[j, k] = np.uint64(m[k]) << np.uint64(bits - 1 - k)
    v.setflags(write=False)
    return v


def raw_sequence(dimension: int, start: int, count: int) -> np.ndarray:
    """Points ``start .. start+count-1`` of the raw sequence in [0,1)^d.

    Index 0 is the origin; :class:`SobolStream` skips it, but aligned blocks
    of the raw sequence (e.g. indices 0..2^m-1) carry the dyadic balance
    properties and are what balance checks should use.
    """
    directions = _direction_matrix(dimension)
    return backend.sobol_fill(
        np.ascontiguousarray(directions), int(start), int(count)
    )


class SobolStream:
    """Stateful cursor over the Sobol sequence, starting past the origin."""

    def __init__(self, dimension: int, start_index: int = 1):
        self.dimension = dimension
        self.index = start_index
        self._directions = np.ascontiguousarray(_direction_matrix(dimension))

    def take(self, count: int) -> np.ndarray:
        points = backend.sobol_fill(self._directions, self.index, count)
        self.index += count
        return points


def sobol_next(stream: SobolStream, domain: SearchDomain) -> np.ndarray:
    """Next stream point mapped into the domain box."""
    if stream.dimension != domain.dimension:
        raise ValueError("stream and domain dimensions differ")
    return domain.from_unit(stream.take(1)[0])


def expected_improvement(
    model: GaussianProcessModel, query: np.ndarray, best: float
) -> float:
    """Closed-form EI of a single query over the incumbent ``best``."""
    query = np.asarray(query, dtype=float)
    mean, var = model.posterior_batch(query[None, :])
    return float(backend.ei_values(mean, var, best, SIGMA_FLOOR)[0])


def _ei_batch(model: GaussianProcessModel, points: np.ndarray, best: float) -> np.ndarray:
    mean, var = model.posterior_batch(points)
    return np.asarray(backend.ei_values(mean, var, best, SIGMA_FLOOR))


@dataclass(frozen=True)
class AcquisitionConfig:
    candidates: int = 1024
    refine_top: int = 8
    refine_iters: int = 12


def candidate_points(
    domain: SearchDomain, seed: int, count: int
) -> np.ndarray:
    """The rotated Sobol candidate batch used by ``maximize_acquisition``.

    A Cranley-Patterson rotation (seeded uniform shift modulo 1) varies the
    batch between calls while preserving its low-discrepancy structure.
    """
    shift = np.random.default_rng(seed).random(domain.dimension)
    unit = (SobolStream(domain.dimension).take(count) + shift) % 1.0
    return domain.from_unit(unit)


def maximize_acquisition(
    model: GaussianProcessModel,
    domain: SearchDomain,
    best: float,
    seed: int = 0,
    config: AcquisitionConfig = AcquisitionConfig(),
    repair=None,
) -> np.ndarray:
    """Best EI point found from Sobol candidates plus local refinement.

    Scores ``config.candidates`` rotated Sobol points, then runs a batched
    coordinate pattern search (axial steps, halved when stuck) from the
    ``config.refine_top`` best. When ``repair`` is given (a batch map of
    policies onto the feasible set), every scored point passes through it
    first, so the search effectively maximizes EI over achievable policies.
    The returned point always lies in the box and its EI is at least that of
    every (repaired) raw candidate. Exact EI ties are broken toward the
    lowest candidate index.
    """
    d = domain.dimension
    if model.dimension != d:
        raise ValueError("model and domain dimensions differ")
    points = candidate_points(domain, seed, config.candidates)
    if repair is not None:
        points = repair(points)
    ei = _ei_batch(model, points, best)

    order = np.argsort(-ei, kind="stable")[: config.refine_top]
    current = points[order].copy()
    current_ei = ei[order].copy()
    steps = np.tile(0.25 * (domain.hi - domain.lo), (len(order), 1))

    for _ in range(config.refine_iters):
        if np.all(steps < 1e-15):
            break
        proposals = current[:, None, None, :] + np.zeros((1, d, 2, 1))
        axis = np.arange(d)
        proposals[:, axis, 0, axis] += steps
        proposals[:, axis, 1, axis] -= steps
        flat = domain.clip(proposals.reshape(-1, d))
        if repair is not None:
            flat = repair(flat)
        flat_ei = _ei_batch(model, flat, best).reshape(len(current), 2 * d)
        best_idx = np.argmax(flat_ei, axis=1)
        best_ei = flat_ei[np.arange(len(current)), best_idx]
        improved = best_ei > current_ei
        moved = flat.reshape(len(current), 2 * d, d)[
            np.arange(len(current)), best_idx
        ]
        current[improved] = moved[improved]
        current_ei[improved] = best_ei[improved]
        steps[~improved] *= 0.5

    winner = int(np.argmax(current_ei))
    return domain.clip(current[winner])
