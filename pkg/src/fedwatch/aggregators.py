"""Robust aggregation strategies over client updates.

Every aggregator sorts the incoming updates by client id before doing any
arithmetic, so the decision is invariant under submission order. Ties are
broken by lowest client id everywhere. ``overhead_ops`` counts elementary
vector operations (vector adds/scales, distance evaluations, per-vector
sort passes) under the fixed formulas documented on each function, giving
a deterministic cost ledger that is comparable across strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ClientId, ClientUpdate, ModelParams

AGGREGATOR_NAMES = (
    "fedavg",
    "trimmed_mean",
    "krum",
    "multi_krum",
    "bulyan",
    "geomedian",
    "sigma_pid",
)

# Parameter names and defaults per aggregator, in stable display order.
AGGREGATOR_PARAMS: dict[str, dict[str, object]] = {
    "fedavg": {},
    "trimmed_mean": {"trim_beta": 1},
    "krum": {"byzantine_f": 1},
    "multi_krum": {"byzantine_f": 1, "multi_krum_m": 1},
    "bulyan": {"byzantine_f": 1},
    "geomedian": {"weiszfeld_tol": 1e-10, "weiszfeld_max_iters": 500},
    "sigma_pid": {"sigma_k": 2.5, "kp": 1.0, "ki": 0.0, "kd": 0.0},
}

MAD_SCALE = 1.4826  # normal-consistency factor for the median absolute deviation
MAD_FLOOR = 1e-9
WEISZFELD_EPS = 1e-9
INTEGRAL_CAP = 10.0  # integral norm is clipped to this multiple of the error norm


@dataclass(frozen=True, eq=False)
class AggregationDecision:
    """Outcome of one aggregation: who was kept, who was not, and the delta."""

    included: tuple[ClientId, ...]
    excluded: tuple[ClientId, ...]
    delta: ModelParams
    overhead_ops: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.included) & set(self.excluded):
            raise ValueError("included and excluded overlap")
        if self.overhead_ops < 0:
            raise ValueError("negative overhead_ops")


@dataclass(frozen=True)
class PidState:
    """Controller memory threaded through rounds (single-owner)."""

    prev_error: np.ndarray | None = None
    integral: np.ndarray | None = None


def _canonical(updates) -> list[ClientUpdate]:
    updates = list(updates)
    if not updates:
        raise ValueError("no updates to aggregate")
    ids = [u.client for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids")
    shape = updates[0].delta.shape
    for u in updates:
        if u.delta.shape != shape:
            raise ValueError("mismatched delta shapes")
    return sorted(updates, key=lambda u: u.client)


def _stack(updates: list[ClientUpdate]) -> tuple[list[int], np.ndarray, np.ndarray]:
    ids = [u.client for u in updates]
    mat = np.stack([u.delta.values for u in updates])
    weights = np.asarray([float(u.num_samples) for u in updates])
    return ids, mat, weights


def _weighted_mean(mat: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (weights[:, None] * mat).sum(axis=0) / weights.sum()


def fedavg(updates) -> AggregationDecision:
    """Sample-count weighted mean of all deltas; nobody is excluded.

    overhead_ops = n (one scale-add per update).
    """
    ups = _canonical(updates)
    ids, mat, weights = _stack(ups)
    delta = _weighted_mean(mat, weights)
    return AggregationDecision(
        included=tuple(ids),
        excluded=(),
        delta=ModelParams(delta, ups[0].delta.shape),
        overhead_ops=len(ups),
    )


def trimmed_mean(updates, trim_beta: int) -> AggregationDecision:
    """Coordinate-wise mean after dropping the beta lowest and highest values.

    Trimming is per coordinate and unweighted. For the decision's exclusion
    sets, a client counts as excluded when more than half of its coordinates
    were trimmed; the aggregated delta itself always uses every submitted
    update coordinate-wise. overhead_ops = n * ceil(log2 n) + 1 (sort passes
    plus the final mean), with the log term 1 when n is 1.

    Requires n > 2 * trim_beta.
    """
    ups = _canonical(updates)
    n = len(ups)
    beta = int(trim_beta)
    if beta < 0:
        raise ValueError(f"trim_beta must be >= 0, got {beta}")
    if n <= 2 * beta:
        raise ValueError(f"trimmed_mean needs n > 2*beta, got n={n}, beta={beta}")
    ids, mat, _ = _stack(ups)
    order = np.argsort(mat, axis=0, kind="stable")
    sorted_mat = np.take_along_axis(mat, order, axis=0)
    delta = sorted_mat[beta : n - beta].mean(axis=0)

    dim = mat.shape[1]
    trimmed_counts = np.zeros(n, dtype=np.int64)
    if beta > 0:
        trimmed_rows = np.concatenate([order[:beta], order[n - beta :]]).ravel()
        np.add.at(trimmed_counts, trimmed_rows, 1)
    excluded_mask = trimmed_counts > dim / 2.0
    included = tuple(ids[i] for i in range(n) if not excluded_mask[i])
    excluded = tuple(ids[i] for i in range(n) if excluded_mask[i])
    ops = n * max(1, math.ceil(math.log2(n))) + 1
    return AggregationDecision(
        included=included,
        excluded=excluded,
        delta=ModelParams(delta, ups[0].delta.shape),
        overhead_ops=ops,
        info={"trim_fraction": {ids[i]: trimmed_counts[i] / dim for i in range(n)}},
    )


def _pairwise_sq_dists(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    sq = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            diff = mat[i] - mat[j]
            d = float(np.dot(diff, diff))
            sq[i, j] = d
            sq[j, i] = d
    return sq


def _krum_score(sq_row: np.ndarray, self_idx: int, k: int) -> float:
    """Sum of the k smallest squared distances to the other updates.

    Summed in ascending order so the value is reproducible exactly.
    """
    others = np.sort(np.delete(sq_row, self_idx))
    total = 0.0
    for v in others[:k]:
        total += float(v)
    return total


def _scores_for(mat: np.ndarray, f: int) -> np.ndarray:
    n = mat.shape[0]
    sq = _pairwise_sq_dists(mat)
    k = n - f - 2
    return np.asarray([_krum_score(sq[i], i, k) for i in range(n)])


def krum(updates, byzantine_f: int) -> AggregationDecision:
    """Select the single update closest to its n-f-2 nearest peers.

    score(i) = sum of squared L2 distances from delta_i to its n-f-2
    nearest other deltas; the minimum-score client wins, ties to the lowest
    id. Requires n >= 2f+3. overhead_ops = n(n-1)/2 + 1.
    """
    ups = _canonical(updates)
    n = len(ups)
    f = int(byzantine_f)
    if f < 0:
        raise ValueError(f"byzantine_f must be >= 0, got {f}")
    if n < 2 * f + 3:
        raise ValueError(f"krum needs n >= 2f+3, got n={n}, f={f}")
    ids, mat, _ = _stack(ups)
    scores = _scores_for(mat, f)
    best = min(range(n), key=lambda i: (scores[i], ids[i]))
    return AggregationDecision(
        included=(ids[best],),
        excluded=tuple(ids[i] for i in range(n) if i != best),
        delta=ups[best].delta,
        overhead_ops=n * (n - 1) // 2 + 1,
        info={"scores": {ids[i]: float(scores[i]) for i in range(n)}},
    )


def multi_krum(updates, byzantine_f: int, m: int) -> AggregationDecision:
    """Keep the m lowest-Krum-score clients and average them by sample count.

    Ties are broken by lowest id. Requires n >= 2f+3 and 1 <= m <= n-f.
    overhead_ops = n(n-1)/2 + m.
    """
    ups = _canonical(updates)
    n = len(ups)
    f = int(byzantine_f)
    m = int(m)
    if f < 0:
        raise ValueError(f"byzantine_f must be >= 0, got {f}")
    if n < 2 * f + 3:
        raise ValueError(f"multi_krum needs n >= 2f+3, got n={n}, f={f}")
    if not 1 <= m <= n - f:
        raise ValueError(f"multi_krum needs 1 <= m <= n-f, got m={m}, n={n}, f={f}")
    ids, mat, weights = _stack(ups)
    scores = _scores_for(mat, f)
    ranked = sorted(range(n), key=lambda i: (scores[i], ids[i]))
    chosen = sorted(ranked[:m])
    delta = _weighted_mean(mat[chosen], weights[chosen])
    return AggregationDecision(
        included=tuple(ids[i] for i in chosen),
        excluded=tuple(ids[i] for i in range(n) if i not in set(chosen)),
        delta=ModelParams(delta, ups[0].delta.shape),
        overhead_ops=n * (n - 1) // 2 + m,
        info={"scores": {ids[i]: float(scores[i]) for i in range(n)}},
    )


def bulyan(updates, byzantine_f: int) -> AggregationDecision:
    """Krum-based selection followed by a trimmed coordinate-wise average.

    Selection: repeatedly run Krum over the remaining updates (score over
    the max(|R|-f-2, 0) nearest peers within R), moving each winner into S,
    until |S| = n-2f. Aggregation: per coordinate, take the median of S and
    average the n-4f values closest to it, breaking distance ties by the
    smaller value and then the lower client id. Requires n >= 4f+3.
    overhead_ops = n(n-1)/2 + 2|S|.
    """
    ups = _canonical(updates)
    n = len(ups)
    f = int(byzantine_f)
    if f < 0:
        raise ValueError(f"byzantine_f must be >= 0, got {f}")
    if n < 4 * f + 3:
        raise ValueError(f"bulyan needs n >= 4f+3, got n={n}, f={f}")
    ids, mat, _ = _stack(ups)
    sq = _pairwise_sq_dists(mat)

    remaining = list(range(n))
    selected: list[int] = []
    while len(selected) < n - 2 * f:
        k = max(len(remaining) - f - 2, 0)
        best = None
        best_key = None
        for i in remaining:
            others = np.sort(sq[i, [j for j in remaining if j != i]])
            score = 0.0
            for v in others[:k]:
                score += float(v)
            key = (score, ids[i])
            if best_key is None or key < best_key:
                best_key = key
                best = i
        selected.append(best)
        remaining.remove(best)

    selected = sorted(selected)
    sel_ids = [ids[i] for i in selected]
    sub = mat[selected]
    keep = n - 4 * f
    dim = sub.shape[1]
    delta = np.empty(dim)
    for c in range(dim):
        col = sub[:, c]
        med = float(np.median(col))
        order = sorted(range(len(selected)), key=lambda i: (abs(col[i] - med), col[i], sel_ids[i]))
        total = 0.0
        for i in order[:keep]:
            total += float(col[i])
        delta[c] = total / keep
    return AggregationDecision(
        included=tuple(sel_ids),
        excluded=tuple(ids[i] for i in range(n) if i not in set(selected)),
        delta=ModelParams(delta, ups[0].delta.shape),
        overhead_ops=n * (n - 1) // 2 + 2 * len(selected),
        info={},
    )


def geomedian(
    updates, weiszfeld_tol: float = 1e-10, weiszfeld_max_iters: int = 500
) -> AggregationDecision:
    """Weighted geometric median of the deltas via smoothed Weiszfeld iteration.

    Starts from the sample-weighted mean and reweights each update by
    w_i / max(distance_i, 1e-9) until the step norm drops below tol or the
    iteration budget runs out (non-convergence is flagged in the decision
    info, not an error). Nobody is excluded.
    overhead_ops = n + 2n * iterations.
    """
    if not weiszfeld_tol > 0:
        raise ValueError(f"weiszfeld_tol must be positive, got {weiszfeld_tol}")
    if weiszfeld_max_iters < 1:
        raise ValueError(f"weiszfeld_max_iters must be >= 1, got {weiszfeld_max_iters}")
    ups = _canonical(updates)
    ids, mat, weights = _stack(ups)
    n = len(ups)
    y = _weighted_mean(mat, weights)
    converged = False
    iters = 0
    for iters in range(1, weiszfeld_max_iters + 1):
        dists = np.maximum(np.linalg.norm(mat - y, axis=1), WEISZFELD_EPS)
        coef = weights / dists
        y_next = (coef[:, None] * mat).sum(axis=0) / coef.sum()
        step = float(np.linalg.norm(y_next - y))
        y = y_next
        if step < weiszfeld_tol:
            converged = True
            break
    return AggregationDecision(
        included=tuple(ids),
        excluded=(),
        delta=ModelParams(y, ups[0].delta.shape),
        overhead_ops=n + 2 * n * iters,
        info={"converged": converged, "iterations": iters},
    )


def sigma_pid(
    updates,
    state: PidState | None,
    sigma_k: float = 2.5,
    kp: float = 1.0,
    ki: float = 0.0,
    kd: float = 0.0,
) -> tuple[AggregationDecision, PidState]:
    """Robust sigma filter around the coordinate-wise median, PID-smoothed.

    Clients whose distance to the median reference exceeds
    median(d) + sigma_k * 1.4826 * MAD(d) are excluded (MAD floored at
    1e-9; if everyone lands outside, the closest client is kept). The
    included sample-weighted mean becomes the error signal of a PID
    controller whose integral term is norm-clipped to 10x the error norm
    and whose derivative is zero on the first round.
    Requires n >= 3. overhead_ops = 2n + |included| + 3.
    """
    if not sigma_k > 0:
        raise ValueError(f"sigma_k must be positive, got {sigma_k}")
    ups = _canonical(updates)
    n = len(ups)
    if n < 3:
        raise ValueError(f"sigma_pid needs n >= 3, got {n}")
    ids, mat, weights = _stack(ups)
    reference = np.median(mat, axis=0)
    dists = np.linalg.norm(mat - reference, axis=1)
    med = float(np.median(dists))
    mad = float(np.median(np.abs(dists - med)))
    scale = max(MAD_SCALE * mad, MAD_FLOOR)
    threshold = med + sigma_k * scale
    keep_mask = dists <= threshold
    if not keep_mask.any():
        closest = min(range(n), key=lambda i: (dists[i], ids[i]))
        keep_mask = np.zeros(n, dtype=bool)
        keep_mask[closest] = True
    kept = np.flatnonzero(keep_mask)
    raw = _weighted_mean(mat[kept], weights[kept])

    error = raw
    prev = state.prev_error if state is not None else None
    integral = state.integral if state is not None else None
    integral = error.copy() if integral is None else integral + error
    cap = INTEGRAL_CAP * float(np.linalg.norm(error))
    inorm = float(np.linalg.norm(integral))
    if inorm > cap:
        integral = integral * (cap / inorm) if inorm > 0 else integral * 0.0
    derivative = np.zeros_like(error) if prev is None else error - prev
    delta = kp * error + ki * integral + kd * derivative

    decision = AggregationDecision(
        included=tuple(ids[i] for i in kept),
        excluded=tuple(ids[i] for i in range(n) if not keep_mask[i]),
        delta=ModelParams(delta, ups[0].delta.shape),
        overhead_ops=2 * n + len(kept) + 3,
        info={"threshold": threshold, "distances": {ids[i]: float(dists[i]) for i in range(n)}},
    )
    return decision, PidState(prev_error=error, integral=integral)


def min_updates(name: str, params: dict) -> int:
    """Smallest submission count the named aggregator can run on."""
    f = int(params.get("byzantine_f", 0))
    if name == "krum" or name == "multi_krum":
        return 2 * f + 3
    if name == "bulyan":
        return 4 * f + 3
    if name == "trimmed_mean":
        return 2 * int(params.get("trim_beta", 0)) + 1
    if name == "sigma_pid":
        return 3
    return 1


def aggregate(
    name: str, params: dict, updates, state: PidState | None = None
) -> tuple[AggregationDecision, PidState | None]:
    """Dispatch to the named aggregator, threading controller state through."""
    if name == "fedavg":
        return fedavg(updates), state
    if name == "trimmed_mean":
        return trimmed_mean(updates, params["trim_beta"]), state
    if name == "krum":
        return krum(updates, params["byzantine_f"]), state
    if name == "multi_krum":
        return multi_krum(updates, params["byzantine_f"], params["multi_krum_m"]), state
    if name == "bulyan":
        return bulyan(updates, params["byzantine_f"]), state
    if name == "geomedian":
        return (
            geomedian(updates, params["weiszfeld_tol"], params["weiszfeld_max_iters"]),
            state,
        )
    if name == "sigma_pid":
        return sigma_pid(
            updates,
            state,
            sigma_k=params["sigma_k"],
            kp=params["kp"],
            ki=params["ki"],
            kd=params["kd"],
        )
    raise ValueError(f"unknown aggregator {name!r}")
