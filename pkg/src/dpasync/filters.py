"""Distributed information-form Kalman filters for frequency/phase tracking.

Four algorithms share one synchronous round made of two exchanges:

* phase 1 -- nodes broadcast ``(pred, y, U)``; each node forms its updated
  information pair, either by consensus on measurements and on predicted
  information (HA-DKF, KF-HCMCI) or from its own measurement alone (DKF,
  KF-DFPC);
* phase 2 -- nodes broadcast that updated pair; HA-DKF and KF-DFPC fuse
  estimates and covariances (CEEC), DKF fuses estimates only (CE), and
  KF-HCMCI skips the exchange. Each node then predicts the next interval.

The per-node functions (``cm_step`` ... ``step_node``) are the readable
reference. ``step_network`` runs the same round for every node at once on
stacked arrays and is what the simulation harness calls.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .core import InfoPair, MomentPair, from_information, invert2, matvec, symmetrize, to_information


class Algorithm(str, Enum):
    HA_DKF = "ha-dkf"
    DKF_CE = "dkf"
    KF_DFPC_CEEC = "kf-dfpc"
    KF_HCMCI = "kf-hcmci"

    @property
    def consensus_on_measurements(self) -> bool:
        return self in (Algorithm.HA_DKF, Algorithm.KF_HCMCI)

    @property
    def fuses_covariances(self) -> bool:
        return self in (Algorithm.HA_DKF, Algorithm.KF_DFPC_CEEC)


ALGORITHMS = (Algorithm.DKF_CE, Algorithm.KF_DFPC_CEEC, Algorithm.KF_HCMCI, Algorithm.HA_DKF)


@dataclass(frozen=True)
class NodeMessage:
    pred: InfoPair
    upd: InfoPair
    y: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class NodeFilterState:
    pred: InfoPair
    upd: InfoPair
    process_info: np.ndarray


Inbox = Sequence[tuple[float, NodeMessage]]


def _check_inbox(inbox):
    if len(inbox) == 0:
        raise ValueError("inbox is empty; a node's neighborhood always includes itself")


def cm_step(inbox: Inbox) -> tuple[np.ndarray, np.ndarray]:
    """Consensus on measurements: weighted average of ``U y`` and of ``U``."""
    _check_inbox(inbox)
    delta_mu = sum(w * (msg.u @ msg.y) for w, msg in inbox)
    delta_omega = sum(w * msg.u for w, msg in inbox)
    return np.asarray(delta_mu, dtype=float), np.asarray(delta_omega, dtype=float)


def ci_step(inbox: Inbox) -> InfoPair:
    """Consensus on information: weighted average of the predicted pairs."""
    _check_inbox(inbox)
    mu = sum(w * msg.pred.mu for w, msg in inbox)
    omega = sum(w * msg.pred.omega for w, msg in inbox)
    return InfoPair(omega, mu)


def cm_ci_correction(ci: InfoPair, cm: tuple[np.ndarray, np.ndarray]) -> InfoPair:
    delta_mu, delta_omega = cm
    return InfoPair(ci.omega + delta_omega, ci.mu + delta_mu)


def ceec_step(inbox_updated: Sequence[tuple[float, InfoPair]], weighted_mean: bool = True) -> MomentPair:
    """Consensus on estimates and error covariances.

    Covariance entries are fused with squared weights. The mean is the
    weighted average of the neighbors' estimates; ``weighted_mean=False``
    gives the plain sum of estimates instead.
    """
    if len(inbox_updated) == 0:
        raise ValueError("empty inbox")
    mean = np.zeros(2)
    cov = np.zeros((2, 2))
    for w, ip in inbox_updated:
        mp = from_information(ip)
        mean = mean + (w if weighted_mean else 1.0) * mp.mean
        cov = cov + abs(w) ** 2 * mp.cov
    return MomentPair(mean, cov)


def predict(upd: MomentPair | InfoPair, w_proc: np.ndarray) -> InfoPair:
    """One-step prediction under a random-walk state with process information ``w_proc``."""
    if isinstance(upd, InfoPair):
        omega, mean = upd.omega, from_information(upd).mean
    else:
        omega, mean = invert2(upd.cov), upd.mean
    omega_pred = _predict_omega(omega, w_proc)
    return InfoPair(omega_pred, matvec(omega_pred, mean))


def _predict_omega(omega, w_proc):
    # W - W (Omega + W)^-1 W, rewritten as W (Omega + W)^-1 Omega; the two are
    # equal exactly but the product avoids cancellation when Omega << W.
    w_proc = np.asarray(w_proc, dtype=float)
    return symmetrize(w_proc @ invert2(omega + w_proc) @ omega)


def init_filter(first_y, first_u, w_proc) -> NodeFilterState:
    """Start from the first measurement as the posterior, with the measurement covariance."""
    first_u = np.asarray(first_u, dtype=float)
    upd = InfoPair(first_u, first_u @ np.asarray(first_y, dtype=float))
    return NodeFilterState(predict(upd, w_proc), upd, np.asarray(w_proc, dtype=float))


def measurement_update(algo: Algorithm, state: NodeFilterState, inbox: Inbox, self_index: int = 0) -> InfoPair:
    """Phase 1 of a round: the node's updated pair before any estimate fusion."""
    algo = Algorithm(algo)
    if algo.consensus_on_measurements:
        return cm_ci_correction(ci_step(inbox), cm_step(inbox))
    own = inbox[self_index][1]
    return InfoPair(state.pred.omega + own.u, state.pred.mu + own.u @ own.y)


def fusion_update(algo: Algorithm, state: NodeFilterState, own_upd: InfoPair,
                  inbox_updated: Sequence[tuple[float, InfoPair]],
                  weighted_mean: bool = True) -> NodeFilterState:
    """Phase 2 of a round: fuse neighbors' updated pairs, then predict."""
    algo = Algorithm(algo)
    if algo.fuses_covariances:
        fused = ceec_step(inbox_updated, weighted_mean=weighted_mean)
    elif algo is Algorithm.DKF_CE:
        mean = sum(w * from_information(ip).mean for w, ip in inbox_updated)
        fused = MomentPair(mean, invert2(own_upd.omega))
    else:
        fused = from_information(own_upd)
    upd = own_upd if algo is Algorithm.KF_HCMCI else to_information(fused)
    return replace(state, pred=predict(fused, state.process_info), upd=upd)


def step_node(algo: Algorithm, state: NodeFilterState, inbox: Inbox, self_index: int = 0,
              weighted_mean: bool = True) -> NodeFilterState:
    """Run one full round for a single node.

    ``inbox`` holds ``(w_nm, message)`` for every neighbor and the node
    itself (at ``self_index``). The ``upd`` field of each neighbor's message
    must already carry that neighbor's phase-1 result for this round; the
    node's own phase-1 result is recomputed here.
    """
    own_upd = measurement_update(algo, state, inbox, self_index)
    inbox_updated = [(w, own_upd if i == self_index else msg.upd) for i, (w, msg) in enumerate(inbox)]
    return fusion_update(algo, state, own_upd, inbox_updated, weighted_mean)


def step_network_reference(algo: Algorithm, states: Sequence[NodeFilterState], ys, u, weights,
                           weighted_mean: bool = True) -> list[NodeFilterState]:
    """One synchronous round over the whole array using only per-node functions.

    Slow; kept as the node-by-node reference for :func:`step_network`.
    """
    weights = np.asarray(weights, dtype=float)
    n = len(states)
    us = np.broadcast_to(np.asarray(u, dtype=float), (n, 2, 2))
    msgs = [NodeMessage(s.pred, s.upd, np.asarray(ys[i], dtype=float), us[i]) for i, s in enumerate(states)]

    def inbox_of(i, messages):
        nbrs = [j for j in range(n) if j == i or weights[i, j] != 0.0]
        return [(weights[i, j], messages[j]) for j in nbrs], nbrs.index(i)

    phase1 = []
    for i, s in enumerate(states):
        inbox, me = inbox_of(i, msgs)
        phase1.append(measurement_update(algo, s, inbox, me))
    msgs2 = [replace(m, upd=phase1[i]) for i, m in enumerate(msgs)]
    out = []
    for i, s in enumerate(states):
        inbox, me = inbox_of(i, msgs2)
        out.append(step_node(algo, s, inbox, me, weighted_mean))
    return out


@dataclass
class NetworkFilterState:
    """Stacked filter state: omegas ``(..., n, 2, 2)``, mus ``(..., n, 2)``.

    Leading axes, when present, index independent networks (trials).
    """

    pred_omega: np.ndarray
    pred_mu: np.ndarray
    upd_omega: np.ndarray
    upd_mu: np.ndarray
    process_info: np.ndarray

    @property
    def n(self) -> int:
        return self.pred_mu.shape[-2]

    def node(self, i: int) -> NodeFilterState:
        return NodeFilterState(InfoPair(self.pred_omega[i], self.pred_mu[i]),
                               InfoPair(self.upd_omega[i], self.upd_mu[i]), self.process_info)

    @classmethod
    def from_nodes(cls, states: Sequence[NodeFilterState]) -> "NetworkFilterState":
        return cls(np.stack([s.pred.omega for s in states]), np.stack([s.pred.mu for s in states]),
                   np.stack([s.upd.omega for s in states]), np.stack([s.upd.mu for s in states]),
                   states[0].process_info)

    def estimates(self) -> np.ndarray:
        """Posterior means ``(n, 2)`` of the latest round."""
        return matvec(invert2(self.upd_omega), self.upd_mu)


def init_network(ys, u, w_proc) -> NetworkFilterState:
    ys = np.asarray(ys, dtype=float)
    w_proc = np.asarray(w_proc, dtype=float)
    upd_omega = np.broadcast_to(np.asarray(u, dtype=float), ys.shape + (2,)).copy()
    upd_mu = matvec(upd_omega, ys)
    pred_omega = _predict_omega(upd_omega, w_proc)
    return NetworkFilterState(pred_omega, matvec(pred_omega, ys), upd_omega, upd_mu, w_proc)


def _wsum(weights, x):
    # sum_m w[..., n, m] * x[..., m, ...] for any trailing shape of x
    lead = weights.ndim - 1
    return (weights @ x.reshape(x.shape[:lead] + (-1,))).reshape(x.shape)


def step_network(algo: Algorithm, state: NetworkFilterState, ys, u, weights,
                 weighted_mean: bool = True) -> tuple[NetworkFilterState, np.ndarray]:
    """One synchronous two-phase round for every node.

    ``ys`` is ``(..., n, 2)`` and ``weights`` ``(..., n, n)``, with matching
    leading axes. Returns the new state and the fused posterior means.
    """
    algo = Algorithm(algo)
    ys = np.asarray(ys, dtype=float)
    weights = np.asarray(weights, dtype=float)
    us = np.broadcast_to(np.asarray(u, dtype=float), ys.shape + (2,))
    uy = matvec(us, ys)

    if algo.consensus_on_measurements:
        upd_omega = _wsum(weights, state.pred_omega) + _wsum(weights, us)
        upd_mu = _wsum(weights, state.pred_mu) + _wsum(weights, uy)
    else:
        upd_omega = state.pred_omega + us
        upd_mu = state.pred_mu + uy

    if algo is Algorithm.KF_HCMCI:
        omega, mu = upd_omega, upd_mu
        mean = matvec(invert2(omega), mu)
    else:
        cov = invert2(upd_omega)
        local_mean = matvec(cov, upd_mu)
        mean = _wsum(weights, local_mean) if weighted_mean else _wsum(weights != 0, local_mean)
        if algo.fuses_covariances:
            omega = invert2(_wsum(weights**2, cov))
        else:
            omega = upd_omega
        mu = matvec(omega, mean)

    pred_omega = _predict_omega(omega, state.process_info)
    new = NetworkFilterState(pred_omega, matvec(pred_omega, mean), omega, mu, state.process_info)
    return new, mean
