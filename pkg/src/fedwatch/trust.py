"""Trust indicators, reputation gating, and the loss/cost/overhead ledger.

This is the monitoring side of the loop: per-round distance statistics
over client updates, an exponentially decayed reputation per client that
can gate participation, and a ledger that books each round's loss, the
training cost spent, and the aggregator overhead into one combined
objective (loss + alpha * cost + beta * overhead).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregators import MAD_FLOOR, MAD_SCALE, AggregationDecision
from .core import ClientId, ModelParams


@dataclass(frozen=True)
class TrustIndicators:
    """Per-client monitoring signals for one round."""

    distance: dict[ClientId, float]
    z_score: dict[ClientId, float]
    reputation: dict[ClientId, float]


@dataclass(frozen=True)
class ReputationState:
    """Exponentially decayed inclusion history per client, in [0, 1]."""

    reputation: dict[ClientId, float]
    decay_lambda: float = 0.9
    participation_threshold: float = 0.0

    @classmethod
    def fresh(
        cls,
        clients,
        decay_lambda: float = 0.9,
        participation_threshold: float = 0.0,
    ) -> "ReputationState":
        """Everyone starts fully trusted."""
        return cls(
            reputation={int(c): 1.0 for c in clients},
            decay_lambda=decay_lambda,
            participation_threshold=participation_threshold,
        )


@dataclass(frozen=True)
class LedgerEntry:
    mean_loss: float
    cost: float
    overhead: float
    objective: float


@dataclass
class ResourceLedger:
    """Round-by-round accounting of the combined objective.

    Bookkeeping identity: objective == mean_loss + alpha*cost + beta*overhead
    exactly as computed.
    """

    alpha: float = 0.0
    beta: float = 0.0
    entries: list[LedgerEntry] = field(default_factory=list)


def compute_indicators(
    updates, global_params: ModelParams, reputation: ReputationState
) -> TrustIndicators:
    """Distance-to-consensus and robust z-score per client.

    The reference is the coordinate-wise median of the deltas; z-scores
    use median/MAD with the same floor as the sigma filter. Reputations
    are copied from the current state. ``global_params`` is the broadcast
    model the deltas are relative to and is used for shape validation.
    """
    ups = sorted(updates, key=lambda u: u.client)
    if not ups:
        raise ValueError("no updates")
    for u in ups:
        if u.delta.shape != global_params.shape:
            raise ValueError("update shape does not match global model")
    mat = np.stack([u.delta.values for u in ups])
    reference = np.median(mat, axis=0)
    dists = np.linalg.norm(mat - reference, axis=1)
    med = float(np.median(dists))
    mad = float(np.median(np.abs(dists - med)))
    scale = max(MAD_SCALE * mad, MAD_FLOOR)
    return TrustIndicators(
        distance={u.client: float(d) for u, d in zip(ups, dists)},
        z_score={u.client: float((d - med) / scale) for u, d in zip(ups, dists)},
        reputation={u.client: reputation.reputation[u.client] for u in ups},
    )


def update_reputation(
    state: ReputationState, decision: AggregationDecision
) -> ReputationState:
    """Decay each submitter's reputation toward its inclusion bit.

    reputation <- lambda * reputation + (1 - lambda) * (1 if included else 0);
    clients that did not submit this round are untouched.
    """
    lam = state.decay_lambda
    rep = dict(state.reputation)
    for cid in decision.included:
        if cid not in rep:
            raise ValueError(f"unknown client id {cid}")
        rep[cid] = lam * rep[cid] + (1.0 - lam)
    for cid in decision.excluded:
        if cid not in rep:
            raise ValueError(f"unknown client id {cid}")
        rep[cid] = lam * rep[cid]
    return ReputationState(
        reputation=rep,
        decay_lambda=state.decay_lambda,
        participation_threshold=state.participation_threshold,
    )


def select_participants(state: ReputationState, all_clients) -> tuple[ClientId, ...]:
    """Clients whose reputation clears the gate, ascending by id.

    If fewer than 3 qualify, the 3 highest-reputation clients (ties to the
    lower id) are returned instead so aggregation preconditions can hold.
    """
    ids = sorted(int(c) for c in all_clients)
    qualified = [c for c in ids if state.reputation[c] >= state.participation_threshold]
    if len(qualified) >= 3 or len(qualified) == len(ids):
        return tuple(qualified)
    top = sorted(ids, key=lambda c: (-state.reputation[c], c))[: min(3, len(ids))]
    return tuple(sorted(top))


def ledger_record(
    ledger: ResourceLedger, mean_loss: float, cost: float, overhead: float
) -> ResourceLedger:
    """Append one round's entry; the objective is computed here, once."""
    if cost < 0 or overhead < 0:
        raise ValueError("cost and overhead must be non-negative")
    objective = mean_loss + ledger.alpha * cost + ledger.beta * overhead
    ledger.entries.append(
        LedgerEntry(mean_loss=mean_loss, cost=cost, overhead=overhead, objective=objective)
    )
    return ledger
