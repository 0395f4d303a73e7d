"""Learnware identification: exact cosine matching over spec vectors.

Registries at the intended scale hold on the order of a hundred entries, so
the search is an exhaustive scan; an approximate index is a documented
extension point, not built. Rankings depend on the stored vectors only,
never on insertion order, except that exact similarity ties fall back to
ascending learnware id.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    AnchorMismatchError,
    BadRequestError,
    InvalidDimsError,
    LengthMismatchError,
    ZeroVectorError,
    ZeroVectorSpecError,
)
from .registry import Registry
from .specgen import Specification


@dataclass(frozen=True)
class RankedMatch:
    learnware_id: int
    similarity: float
    rank: int


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """<u, v> / (|u| |v|), accumulated in float64, clamped to [-1, 1].

    Inputs are normalized first; if the unit vectors come out bit-equal
    (identical or exactly scaled inputs) the result is exactly +/-1.0,
    where the rounded dot product could otherwise land one ulp inside.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise LengthMismatchError(f"vector lengths differ: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine is undefined for the zero vector")
    un = u / nu
    vn = v / nv
    if np.array_equal(un, vn):
        return 1.0
    if np.array_equal(un, -vn):
        return -1.0
    return float(np.clip(float(un @ vn), -1.0, 1.0))


def identify(reg: Registry, user_spec: Specification, k: int) -> list[RankedMatch]:
    """Top-k registered learnwares by cosine similarity to the user spec."""
    if k < 1:
        raise BadRequestError(f"k must be at least 1, got {k}")
    if user_spec.anchor_id != reg.anchor_id:
        raise AnchorMismatchError(
            "user spec was generated against a different anchor"
        )
    query = np.asarray(user_spec.vector, dtype=np.float64)
    if not np.any(query):
        raise ZeroVectorSpecError("user spec vector is all zeros")
    scored = [
        (-cosine(query, lw.spec.vector), lw.id) for lw in reg.list_learnwares()
    ]
    scored.sort()
    return [
        RankedMatch(learnware_id=lw_id, similarity=-neg, rank=pos + 1)
        for pos, (neg, lw_id) in enumerate(scored[:k])
    ]


@dataclass(frozen=True)
class AgreementStats:
    mean_abs_gap: float
    kendall_tau: float
    n_pairs: int


def low_rank_agreement_probe(
    d: int, r: int, n_pairs: int, seed: int
) -> AgreementStats:
    """Measure how well cos(B1, B2) stands in for cos(B1 A, B2 A).

    A is drawn once, shared by every pair, mirroring the single shared
    anchor. Each B pair is Gaussian with a random target correlation, so
    the sampled similarities sweep the whole range the way real task pairs
    do; independent pairs would all have near-zero similarity and the rank
    comparison would be ordering noise against noise. Reports the mean
    absolute cosine gap and the Kendall rank correlation between the two
    orderings of the sampled pairs.
    """
    if not (d >= r >= 1):
        raise InvalidDimsError(f"need d >= r >= 1, got d={d}, r={r}")
    if n_pairs < 1:
        raise InvalidDimsError(f"n_pairs must be at least 1, got {n_pairs}")
    from scipy.stats import kendalltau

    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, 1.0 / np.sqrt(r), (r, d))
    low, full = np.empty(n_pairs), np.empty(n_pairs)
    for i in range(n_pairs):
        B1 = rng.normal(0.0, 1.0, (d, r))
        c = rng.uniform(-1.0, 1.0)
        B2 = c * B1 + np.sqrt(1.0 - c * c) * rng.normal(0.0, 1.0, (d, r))
        low[i] = cosine(B1, B2)
        full[i] = cosine(B1 @ A, B2 @ A)
    if n_pairs == 1:
        tau = 1.0
    else:
        tau = float(kendalltau(low, full).statistic)
    return AgreementStats(
        mean_abs_gap=float(np.mean(np.abs(full - low))),
        kendall_tau=tau,
        n_pairs=n_pairs,
    )
