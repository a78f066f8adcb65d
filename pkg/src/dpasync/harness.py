"""Synchronous-round simulation of an open-loop distributed array and its Monte Carlo driver."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from .filters import Algorithm, NetworkFilterState, init_network, step_network
from .metrics import convergence_iteration, deviation_from_mean_error, residual_phase_error, wrap_phase
from .network import ConnectivityError, Topology, random_topology
from .noise import (
    ElectricalState,
    MeasurementParams,
    OscillatorParams,
    adev_sigma_f,
    crlb_sigmas,
    draw_initial_state,
    evolve_state,
    jitter_sigma_theta,
    measure_state,
    measurement_info,
    process_info,
)

logger = logging.getLogger(__name__)


class Actuation(str, Enum):
    APPLY_ESTIMATE = "apply"
    OBSERVE_ONLY = "observe"


class MetricMode(str, Enum):
    PAPER_FORMULA = "paper-formula"
    DEVIATION_FROM_MEAN = "deviation-from-mean"


# stream ids under each trial's seed
_TOPOLOGY_STREAM, _INITIAL_STREAM, _NOISE_STREAM = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int = 100
    connectivity: float = 0.2
    snr_db: float = 0.0
    fc: float = 1e9
    fs: float = 1e7
    T: float = 1e-4
    beta1: float = 5e-19
    beta2: float = 5e-19
    A: float = -53.46
    init_ppm: float = 1e-4
    n_iterations: int = 300
    n_trials: int = 1000
    algorithm: Algorithm = Algorithm.HA_DKF
    seed: int = 0
    actuation: Actuation = Actuation.APPLY_ESTIMATE
    metric_mode: MetricMode = MetricMode.PAPER_FORMULA

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "actuation", Actuation(self.actuation))
        object.__setattr__(self, "metric_mode", MetricMode(self.metric_mode))
        for name in ("n_nodes", "n_iterations", "n_trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_nodes < 2:
            raise ValueError(f"n_nodes must be >= 2, got {self.n_nodes}")
        if not 0.05 <= self.connectivity <= 1.0:
            raise ValueError(f"connectivity must lie in [0.05, 1], got {self.connectivity}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        # delegate the remaining range checks
        self.oscillator
        if self.measurement.sample_count(self.T) < 2:
            raise ValueError("T * fs must give at least 2 samples")

    @property
    def oscillator(self) -> OscillatorParams:
        return OscillatorParams(self.fc, self.beta1, self.beta2, self.A, self.T, self.init_ppm)

    @property
    def measurement(self) -> MeasurementParams:
        return MeasurementParams(self.fs, self.snr_db)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, Enum):
                d[k] = v.value
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    freq_errors: np.ndarray  # Hz, f_n(k) minus the mean initial frequency
    phase_errors: np.ndarray  # rad, wrapped to (-pi, pi]
    total_phase_std: float  # across-node std of residual_errors
    residual_errors: np.ndarray = field(default=None, repr=False)  # rad, per-node residual phase error


@dataclass
class TrialResult:
    trial_index: int
    total_phase_std: np.ndarray  # (n_iterations,)
    residual_mean: np.ndarray  # (n_iterations,) across-node mean of the residual phase error
    convergence_iteration: int | None  # 0-based index into the iteration series
    freq_errors: np.ndarray | None = None  # (n_iterations, n_nodes), only when traces are kept
    phase_errors: np.ndarray | None = None
    residual_errors: np.ndarray | None = None

    @property
    def records(self) -> list[IterationRecord]:
        if self.freq_errors is None:
            raise ValueError("per-node traces were not kept for this trial")
        return [IterationRecord(k + 1, self.freq_errors[k], self.phase_errors[k], float(self.total_phase_std[k]),
                                self.residual_errors[k])
                for k in range(self.total_phase_std.size)]

    @property
    def steady_state_std(self) -> float:
        return steady_state_std(self.total_phase_std, self.residual_mean)


STEADY_STATE_FRACTION = 0.5
CONVERGENCE_WINDOW = 41


def steady_state_std(stds, means, fraction: float = STEADY_STATE_FRACTION) -> float:
    """Residual phase error std pooled over nodes and the final ``fraction`` of iterations."""
    stds = np.asarray(stds, dtype=float)
    means = np.asarray(means, dtype=float)
    k = max(1, int(np.ceil(fraction * stds.size)))
    s, m = stds[-k:], means[-k:]
    return float(np.sqrt(np.mean(s**2 + (m - m.mean()) ** 2)))


def smoothed_convergence_iteration(stds, window: int = CONVERGENCE_WINDOW, **kwargs) -> int | None:
    """:func:`convergence_iteration` on the forward moving RMS of the per-iteration std.

    Entry k of the smoothed series pools iterations k .. k + window - 1, so
    the returned index is still the first converged iteration. The window
    shrinks to a fifth of the series for short runs. Smoothing is
    needed because a single iteration's std over N nodes carries roughly
    1/sqrt(2N) relative sampling noise, more than the 5% band.
    """
    stds = np.asarray(stds, dtype=float)
    # short runs keep at least five smoothed points
    w = max(1, min(window, stds.size // 5))
    rms = np.sqrt(np.convolve(stds**2, np.full(w, 1.0 / w), mode="valid"))
    return convergence_iteration(rms, **kwargs)


def trial_rng(seed: int, trial_index: int, stream: int, node: int | None = None) -> np.random.Generator:
    """Independent generator for one (trial, purpose[, node]) key of a master seed."""
    key = (trial_index, stream) if node is None else (trial_index, stream, node)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


class NodeStreams:
    """Per-node noise generators of one trial.

    Every round takes one row of standard normals per node, ordered
    (eps_f, eps_theta, df, dtheta). Node n's draws do not depend on the
    array size, so runs at different N share noise for their common nodes.
    """

    CHUNK = 64

    def __init__(self, seed: int, trial_index: int, n_nodes: int):
        self._gens = [trial_rng(seed, trial_index, _NOISE_STREAM, n) for n in range(n_nodes)]
        self._buf = np.empty((0, n_nodes, 4))
        self._pos = 0

    def next(self) -> np.ndarray:
        """``(n_nodes, 4)`` standard normals for the next round."""
        if self._pos == len(self._buf):
            # chunked draws continue each generator's sequence unchanged
            self._buf = np.stack([g.standard_normal((self.CHUNK, 4)) for g in self._gens], axis=1)
            self._pos = 0
        self._pos += 1
        return self._buf[self._pos - 1]


def _noise_sigmas(config: SimConfig) -> np.ndarray:
    osc = config.oscillator
    sf_m, st_m = crlb_sigmas(config.measurement, osc)
    return np.array([sf_m, st_m, adev_sigma_f(osc), jitter_sigma_theta(osc.A)])


def trial_topology(config: SimConfig, trial_index: int) -> Topology:
    try:
        return random_topology(config.n_nodes, config.connectivity,
                               trial_rng(config.seed, trial_index, _TOPOLOGY_STREAM))
    except ConnectivityError as exc:
        raise ConnectivityError(f"trial {trial_index}: {exc}") from exc


def _residuals(config: SimConfig, est, f, theta, draw):
    """Per-node residual phase error for the configured metric; arrays ``(..., n)``."""
    if config.metric_mode is MetricMode.PAPER_FORMULA:
        eps = est - est.mean(axis=-2, keepdims=True)
        return residual_phase_error(draw, eps[..., 0], eps[..., 1], config.T)
    return deviation_from_mean_error(f, theta, config.T)


def run_round(true_states: ElectricalState, filter_state: NetworkFilterState, topology: Topology,
              config: SimConfig, rng: NodeStreams | None, iteration: int = 1,
              reference: tuple[float, float] | None = None, noise: bool = True):
    """Measure, exchange and filter, actuate, drift, record -- one synchronous round.

    Filter states hold frequency as an offset from ``config.fc``.
    ``noise=False`` zeroes the measurement errors and oscillator drift while
    the filters keep their nominal noise model; ``rng`` is then unused.
    ``reference`` is the (frequency, phase) that per-node errors are
    measured against, normally the array mean at iteration 0; by default
    the current array mean is used.
    """
    osc, meas = config.oscillator, config.measurement
    offset = np.array([config.fc, 0.0])
    if noise:
        e = rng.next() * _noise_sigmas(config)
    else:
        e = np.zeros((np.size(true_states.f), 4))
    y, u = measure_state(true_states, meas, osc, None, errors=(e[:, 0], e[:, 1]))
    filter_state, est = step_network(config.algorithm, filter_state, y - offset, u, topology.weights)
    est = est + offset

    if config.actuation is Actuation.APPLY_ESTIMATE:
        true_states = ElectricalState(est[:, 0].copy(), est[:, 1].copy())
    true_states, draw = evolve_state(true_states, osc, None, draw=(e[:, 2], e[:, 3]))
    resid = _residuals(config, est, true_states.f, true_states.theta, draw)

    if reference is None:
        reference = (float(np.mean(true_states.f)), float(np.mean(true_states.theta)))
    record = IterationRecord(
        iteration,
        true_states.f - reference[0],
        wrap_phase(true_states.theta - reference[1]),
        float(np.std(resid)),
        resid,
    )
    return true_states, filter_state, record


def start_trial(config: SimConfig, trial_index: int):
    """Topology, initial states, noise stream and initialized filters of one trial.

    The initial measurement seeds the filters, then the oscillators drift
    for one interval before the first round.
    """
    topology = trial_topology(config, trial_index)
    osc, meas = config.oscillator, config.measurement
    init = [draw_initial_state(osc, trial_rng(config.seed, trial_index, _INITIAL_STREAM, n))
            for n in range(config.n_nodes)]
    states = ElectricalState(np.array([s.f for s in init]), np.array([s.theta for s in init]))
    reference = (float(states.f.mean()), float(states.theta.mean()))
    streams = NodeStreams(config.seed, trial_index, config.n_nodes)
    e = streams.next() * _noise_sigmas(config)
    y0, u = measure_state(states, meas, osc, None, errors=(e[:, 0], e[:, 1]))
    filt = init_network(y0 - np.array([config.fc, 0.0]), u, process_info(osc))
    states, _ = evolve_state(states, osc, None, draw=(e[:, 2], e[:, 3]))
    return topology, states, filt, streams, reference


def _stack_filters(filters):
    return NetworkFilterState(*(np.stack([getattr(f, name) for f in filters])
                                for name in ("pred_omega", "pred_mu", "upd_omega", "upd_mu")),
                              filters[0].process_info)


def simulate_trials(config: SimConfig, trial_indices, keep_traces: bool = False) -> list[TrialResult]:
    """Run several trials side by side on stacked arrays.

    Each trial draws from its own generators in the same order as
    :func:`run_round`, so results do not depend on how trials are grouped.
    """
    trial_indices = list(trial_indices)
    if not trial_indices:
        return []
    starts = [start_trial(config, i) for i in trial_indices]
    weights = np.stack([s[0].weights for s in starts])
    f = np.stack([s[1].f for s in starts])
    theta = np.stack([s[1].theta for s in starts])
    filt = _stack_filters([s[2] for s in starts])
    streams = [s[3] for s in starts]
    ref = np.array([s[4] for s in starts])

    osc, meas = config.oscillator, config.measurement
    sigmas = _noise_sigmas(config)
    u = measurement_info(meas, osc)
    offset = np.array([config.fc, 0.0])
    B, N, K = len(trial_indices), config.n_nodes, config.n_iterations
    apply = config.actuation is Actuation.APPLY_ESTIMATE

    stds = np.empty((B, K))
    means = np.empty((B, K))
    if keep_traces:
        traces = np.empty((3, B, K, N))
    for k in range(K):
        e = np.stack([s.next() for s in streams]) * sigmas  # (B, N, 4), as in run_round
        y = np.stack([f + e[..., 0], theta + e[..., 1]], axis=-1)
        filt, est = step_network(config.algorithm, filt, y - offset, u, weights)
        est = est + offset
        if apply:
            f, theta = est[..., 0].copy(), est[..., 1].copy()
        state, draw = evolve_state(ElectricalState(f, theta), osc, None, draw=(e[..., 2], e[..., 3]))
        f, theta = state.f, state.theta
        resid = _residuals(config, est, f, theta, draw)
        stds[:, k] = np.std(resid, axis=-1)
        means[:, k] = np.mean(resid, axis=-1)
        if keep_traces:
            traces[0, :, k] = f - ref[:, :1]
            traces[1, :, k] = wrap_phase(theta - ref[:, 1:])
            traces[2, :, k] = resid

    results = []
    for b, idx in enumerate(trial_indices):
        r = TrialResult(idx, stds[b], means[b], smoothed_convergence_iteration(stds[b]))
        if keep_traces:
            r.freq_errors, r.phase_errors, r.residual_errors = traces[0, b], traces[1, b], traces[2, b]
        results.append(r)
    return results


def run_trial(config: SimConfig, trial_index: int, keep_traces: bool = True) -> TrialResult:
    return simulate_trials(config, [trial_index], keep_traces)[0]


@dataclass
class MonteCarloResult:
    config: SimConfig
    trials: list[TrialResult]

    @property
    def phase_std(self) -> np.ndarray:
        """(n_trials, n_iterations) per-trial across-node std."""
        return np.stack([t.total_phase_std for t in self.trials])

    def per_iteration(self) -> dict[str, np.ndarray]:
        s = self.phase_std
        means = np.stack([t.residual_mean for t in self.trials])
        pooled = np.sqrt(np.mean(s**2 + (means - means.mean(axis=0)) ** 2, axis=0))
        return {
            "median": np.median(s, axis=0),
            "mean": np.mean(s, axis=0),
            "std": np.std(s, axis=0),
            "p10": np.percentile(s, 10, axis=0),
            "p90": np.percentile(s, 90, axis=0),
            "pooled": pooled,
        }

    @property
    def convergence_iterations(self) -> list[int | None]:
        return [t.convergence_iteration for t in self.trials]

    def median_convergence_iteration(self) -> float:
        """Median over trials, counting never-converged trials as the run length."""
        K = self.config.n_iterations
        return float(np.median([K if c is None else c for c in self.convergence_iterations]))

    @property
    def steady_state(self) -> np.ndarray:
        return np.array([t.steady_state_std for t in self.trials])

    def steady_state_median(self) -> float:
        return float(np.median(self.steady_state))


def _chunks(indices, n_chunks):
    return [c.tolist() for c in np.array_split(np.asarray(indices), n_chunks) if c.size]


def run_monte_carlo(config: SimConfig, threads: int = 1, batch_size: int = 64,
                    keep_traces: bool = False) -> MonteCarloResult:
    """Run ``config.n_trials`` independent trials, in ``threads`` worker processes when > 1.

    Trials are gathered in index order, so the result is identical for any
    worker count or batch size.
    """
    indices = list(range(config.n_trials))
    n_chunks = max(threads, int(np.ceil(len(indices) / batch_size)))
    chunks = _chunks(indices, n_chunks)
    if threads <= 1:
        parts = [simulate_trials(config, c, keep_traces) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(simulate_trials, [config] * len(chunks), chunks, [keep_traces] * len(chunks)))
    trials = sorted((t for part in parts for t in part), key=lambda t: t.trial_index)
    logger.debug("ran %d trials of %s", len(trials), config.algorithm.value)
    return MonteCarloResult(config, trials)
