"""Federated round loop for sign-based SGD with optional Byzantine voters.

One shared weight vector stands in for every worker's model, since all
workers apply the same broadcast. Normal workers are indexed ``0..M-1`` and
Byzantine voters ``M..M+B-1`` in vote matrices and credit ledgers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import aggregation as agg
from ..compressors import (
    DpSignParams,
    StoSignParams,
    byzantine_sign,
    clip_rows_l2,
    dp_sign,
    sign_compress,
    sto_sign,
    top_k_count,
    top_k_indices,
    top_k_mask,
)
from ..config import DP_ALGORITHMS, EF_ALGORITHMS, ExperimentConfig, MixtureData, QuadraticData
from ..privacy import PrivacyBudget
from ..vectors import Purpose, derive_stream, pack_signs, payload_bits, unpack_signs
from . import data as data_mod
from . import models

FLOAT_BITS = 32


def lr_schedule(kind: str, eta0: float, t: int, *, milestones=(), rate: float = 0.99,
                T: int | None = None, d: int | None = None) -> float:
    """Learning rate for round ``t`` (0-based).

    ``step-decay`` divides ``eta0`` by the divisor of the last milestone reached;
    divisors are relative to ``eta0``, not compounded. ``theory`` ignores ``eta0``
    and returns ``1 / sqrt(T d)``.
    """
    if not eta0 > 0:
        raise ValueError("eta0 must be positive")
    if kind == "constant":
        return eta0
    if kind == "multiplicative-decay":
        return eta0 * rate**t
    if kind == "step-decay":
        divisor = 1.0
        for milestone, div in sorted(milestones):
            if t >= milestone:
                divisor = div
        return eta0 / divisor
    if kind == "theory":
        if not T or not d:
            raise ValueError("theory learning rate needs T and d")
        return 1.0 / math.sqrt(T * d)
    raise ValueError(f"unknown learning-rate schedule {kind!r}")


@dataclass
class RoundMetrics:
    round: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    wrong_agg_frac: float
    uplink_bits: int
    downlink_bits: int
    lr: float
    credits: np.ndarray | None = None


@dataclass
class TrainState:
    w: np.ndarray
    round: int = 0
    ledger: agg.CreditLedger | None = None
    residual: agg.ResidualState | None = None


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    summary: dict
    state: TrainState = field(repr=False)


class Simulation:
    """Fixed experiment data (model, partitions, datasets) built from a config."""

    def __init__(self, config: ExperimentConfig, track_metrics: bool = True):
        self.config = config
        # False skips losses, accuracies and the true gradient; replicate studies
        # that only need the weight trajectory run several times faster.
        self.track_metrics = track_metrics
        self.spec = models.ModelSpec(config.model.kind, tuple(config.model.dims))
        self.d = self.spec.num_params
        self.M = config.M
        self.B = config.byzantine.count
        self.N = self.M + self.B
        self._build_data()
        self._local = [self.train.subset(idx) for idx in self.partition.indices]
        self._pooled = self.train.subset(np.concatenate(self.partition.indices))
        self.privacy = self._privacy_budget()
        self._dp_params = None
        if self.privacy is not None:
            if self.privacy.mechanism == "gaussian":
                self._dp_params = DpSignParams("gaussian", sigma=self.privacy.scale)
            else:
                self._dp_params = DpSignParams("laplace", lam=self.privacy.scale)

    def _build_data(self):
        cfg, seed = self.config, self.config.seed
        ds_cfg = cfg.dataset
        if isinstance(ds_cfg, QuadraticData):
            train = data_mod.quadratic_targets(ds_cfg.targets)
            if train.X.shape[1] != self.spec.dims[0]:
                raise ValueError(f"targets have dimension {train.X.shape[1]}, model expects {self.spec.dims[0]}")
            self.train, self.test = train, train
            self.partition = data_mod.WorkerPartition([np.array([m]) for m in range(self.M)])
            return
        gen = derive_stream(seed, 0, 0, Purpose.DATA)
        if isinstance(ds_cfg, MixtureData):
            full = data_mod.gaussian_mixture(ds_cfg.samples, ds_cfg.features, ds_cfg.classes,
                                             ds_cfg.separation, gen)
        else:
            full = data_mod.linear_regression_data(ds_cfg.samples, ds_cfg.features, ds_cfg.noise, gen)
        self.train, self.test = data_mod.train_test_split(full, derive_stream(seed, 0, 1, Purpose.DATA))
        part_rng = derive_stream(seed, 0, 0, Purpose.PARTITION)
        if cfg.labels_per_worker is not None:
            self.partition = data_mod.partition_by_label(self.train.y, self.M, cfg.labels_per_worker, part_rng)
        else:
            self.partition = data_mod.iid_partition(len(self.train), self.M, part_rng)

    def _privacy_budget(self):
        dp = self.config.dp
        if dp is None:
            return None
        window = dp.accounting_rounds or self.config.rounds
        if dp.mechanism == "gaussian":
            return PrivacyBudget.gaussian(dp.epsilon, dp.delta, dp.clip, window)
        # L2 clipping at C bounds the L1 sensitivity by sqrt(d) * C
        return PrivacyBudget.laplace(dp.epsilon, math.sqrt(self.d) * dp.clip, window)

    # -- per-worker pieces -------------------------------------------------

    def local_data(self, m: int) -> data_mod.Dataset:
        return self._local[m]

    def batch_indices(self, m: int, t: int) -> np.ndarray:
        n = len(self.partition.indices[m])
        bs = self.config.batch_size
        if bs == 0 or bs >= n:
            return np.arange(n)
        per_epoch = n // bs
        epoch, pos = divmod(t, per_epoch)
        perm = derive_stream(self.config.seed, epoch, m, Purpose.BATCH).permutation(n)
        return np.sort(perm[pos * bs:(pos + 1) * bs])

    def worker_gradient(self, w: np.ndarray, m: int, t: int) -> np.ndarray:
        batch = self._local[m]
        bs = self.config.batch_size
        if bs and bs < len(batch):
            batch = batch.subset(self.batch_indices(m, t))
        if self.config.algorithm in DP_ALGORITHMS:
            G = models.per_sample_gradients(self.spec, w, batch.X, batch.y)
            return clip_rows_l2(G, self.config.dp.clip).mean(axis=0)
        return models.gradient(self.spec, w, batch.X, batch.y)

    def true_gradient(self, w: np.ndarray) -> np.ndarray:
        """Mean of the normal workers' full local gradients."""
        grads = [models.gradient(self.spec, w, ds.X, ds.y) for ds in self._local]
        return np.mean(grads, axis=0)

    def sto_params(self, normal_grads: np.ndarray) -> StoSignParams:
        b = self.config.b
        if b.mode == "fixed-scalar":
            return StoSignParams.fixed(b.value, self.d)
        if b.mode == "oracle-max":
            return StoSignParams.oracle_max(normal_grads)
        return StoSignParams.theory_schedule(self.config.rounds, self.d)

    @property
    def skip_mode(self) -> bool:
        dp = self.config.dp
        return self.config.algorithm == "dp-topk" and dp.skip_untransmitted

    def uplink_payload_bits(self) -> int:
        alg = self.config.algorithm
        if alg == "full-precision":
            return FLOAT_BITS * self.d
        if self.skip_mode:
            k = top_k_count(self.d, self.config.dp.topk_fraction)
            return k * (1 + max(1, math.ceil(math.log2(self.d))))
        return payload_bits(self.d)

    def downlink_payload_bits(self) -> int:
        if self.config.algorithm == "full-precision":
            return FLOAT_BITS * self.d
        return payload_bits(self.d)

    def compress(self, g: np.ndarray, m: int, t: int, sto: StoSignParams | None) -> np.ndarray:
        """Worker ``m``'s vote after the wire round trip; 0 marks an untransmitted coordinate."""
        alg = self.config.algorithm
        if alg == "sign":
            return unpack_signs(pack_signs(sign_compress(g)), self.d)
        rng = derive_stream(self.config.seed, t, m, Purpose.COMPRESS)
        if alg in ("sto", "ef-sto"):
            s = sto_sign(g, sto, rng)
        elif alg in ("dp", "ef-dp"):
            s = dp_sign(g, self._dp_params, rng)
        elif alg == "dp-topk":
            if self.skip_mode:
                keep = top_k_indices(g, self.config.dp.topk_fraction)
                return self._sparse_wire(keep, dp_sign(g[keep], self._dp_params, rng))
            s = dp_sign(top_k_mask(g, self.config.dp.topk_fraction), self._dp_params, rng)
        else:
            raise ValueError(f"{alg} has no sign compressor")
        return unpack_signs(pack_signs(s), self.d)

    def _sparse_wire(self, keep: np.ndarray, signs: np.ndarray) -> np.ndarray:
        vote = np.zeros(self.d, dtype=np.int8)
        vote[keep] = unpack_signs(pack_signs(signs), keep.size)
        return vote

    def byzantine_vote(self, target: np.ndarray) -> np.ndarray:
        if self.config.algorithm == "full-precision":
            return -target
        s = byzantine_sign(target)
        if self.skip_mode:
            keep = top_k_indices(target, self.config.dp.topk_fraction)
            return self._sparse_wire(keep, s[keep])
        return unpack_signs(pack_signs(s), self.d)

    # -- round driver ------------------------------------------------------

    def initial_state(self) -> TrainState:
        scale = self.config.model.init_scale
        w = models.init_params(self.spec, derive_stream(self.config.seed, 0, 0, Purpose.INIT), scale)
        state = TrainState(w)
        if self.config.aggregator == "weighted":
            state.ledger = agg.CreditLedger.initial(self.N)
        if self.config.algorithm in EF_ALGORITHMS:
            state.residual = agg.ResidualState.initial(self.d, self.N)
        return state

    def _map_workers(self, fn):
        if self.config.parallel_workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.parallel_workers) as pool:
                return list(pool.map(fn, range(self.M)))
        return [fn(m) for m in range(self.M)]

    def run_round(self, state: TrainState):
        cfg = self.config
        t = state.round
        lr_cfg = cfg.lr
        lr = lr_schedule(lr_cfg.kind, lr_cfg.eta0, t, milestones=lr_cfg.milestones, rate=lr_cfg.rate,
                         T=cfg.rounds, d=self.d)
        w = state.w
        grads = np.stack(self._map_workers(lambda m: self.worker_gradient(w, m, t)))
        need_true = self.track_metrics or (self.B and cfg.byzantine.knowledge == "true-full-gradient")
        true_grad = self.true_gradient(w) if need_true else None
        if self.B:
            target = true_grad if cfg.byzantine.knowledge == "true-full-gradient" else grads.mean(axis=0)

        ledger, residual = state.ledger, state.residual
        if cfg.algorithm == "full-precision":
            sent = list(grads) + [self.byzantine_vote(target) for _ in range(self.B)]
            step = np.mean(sent, axis=0)
            direction = step
        else:
            sto = self.sto_params(grads) if cfg.algorithm in ("sto", "ef-sto") else None
            votes = self._map_workers(lambda m: self.compress(grads[m], m, t, sto))
            votes += [self.byzantine_vote(target) for _ in range(self.B)]
            V = np.stack(votes)
            if residual is not None:
                broadcast, scale, residual = agg.ef_aggregate(residual, V)
                arg = broadcast + residual.scaled_residual
                if not agg.ef_invariants_hold(arg, residual.scaled_residual, self.N):
                    raise AssertionError(f"error-feedback parity broken at round {t}")
            elif ledger is not None:
                broadcast = agg.weighted_vote(V, ledger, allow_abstain=self.skip_mode)
                ledger = agg.update_credits(ledger, V, broadcast, allow_abstain=self.skip_mode)
                scale = 1.0
            else:
                broadcast = agg.majority_vote(V, allow_abstain=self.skip_mode)
                scale = 1.0
            broadcast = unpack_signs(pack_signs(broadcast), self.d)
            step = scale * broadcast
            direction = broadcast

        w_next = w - lr * step
        new_state = TrainState(w_next, t + 1, ledger, residual)
        if not self.track_metrics:
            return new_state, None
        metrics = RoundMetrics(
            round=t + 1,
            train_loss=self.train_loss(w_next),
            test_loss=models.loss(self.spec, w_next, *_xy(self.test)),
            train_acc=self.train_accuracy(w_next),
            test_acc=models.accuracy(self.spec, w_next, *_xy(self.test)),
            wrong_agg_frac=float(np.mean(sign_compress(direction) != sign_compress(true_grad))),
            uplink_bits=self.N * self.uplink_payload_bits(),
            downlink_bits=self.N * self.downlink_payload_bits(),
            lr=lr,
            credits=None if ledger is None else ledger.credits.copy(),
        )
        return new_state, metrics

    def train_loss(self, w) -> float:
        return models.loss(self.spec, w, self._pooled.X, self._pooled.y)

    def train_accuracy(self, w) -> float:
        return models.accuracy(self.spec, w, self._pooled.X, self._pooled.y)


def _xy(ds: data_mod.Dataset):
    return ds.X, ds.y


def run_round(sim: Simulation, state: TrainState):
    return sim.run_round(state)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    sim = Simulation(config)
    state = sim.initial_state()
    series = []
    for _ in range(config.rounds):
        state, m = sim.run_round(state)
        series.append(m)
    return ExperimentResult(series, summarize(sim, series, state), state)


def summarize(sim: Simulation, series: list[RoundMetrics], state: TrainState) -> dict:
    cfg = sim.config
    last = series[-1]
    per_worker = sim.uplink_payload_bits()
    full = FLOAT_BITS * sim.d
    summary = {
        "algorithm": cfg.algorithm,
        "aggregator": cfg.aggregator,
        "seed": cfg.seed,
        "rounds": len(series),
        "normal_workers": sim.M,
        "byzantine_workers": sim.B,
        "dimension": sim.d,
        "final": {
            "train_loss": last.train_loss,
            "test_loss": last.test_loss,
            "train_acc": last.train_acc,
            "test_acc": last.test_acc,
            "wrong_agg_frac": last.wrong_agg_frac,
        },
        "uplink_bits_per_worker_per_round": per_worker,
        "full_precision_uplink_bits_per_worker_per_round": full,
        "compression_ratio": full / per_worker,
        "total_uplink_bits": sum(m.uplink_bits for m in series),
        "total_downlink_bits": sum(m.downlink_bits for m in series),
    }
    if sim.privacy is not None:
        summary["privacy"] = sim.privacy.as_dict(cfg.dp.report_delta)
    if state.ledger is not None:
        summary["final_credits"] = state.ledger.credits.tolist()
    if state.residual is not None:
        summary["residual_all_even"] = bool(np.all(state.residual.scaled_residual % 2 == 0))
    return summary


def quadratic_trajectories(config: ExperimentConfig, seeds) -> np.ndarray:
    """Weight trajectories of the heterogeneous quadratic for many seeds at once.

    Advances every seed in lockstep with array operations, drawing from the same
    per-``(seed, round, worker)`` streams as :class:`Simulation`, so row ``r``
    equals the single-run trajectory for ``seeds[r]`` exactly. Covers sign,
    sto, ef-sto and full-precision on the quadratic with majority or
    error-feedback aggregation and fixed or theory-schedule ``b``. Returns shape ``(len(seeds), rounds + 1, d)`` including
    the initial point.
    """
    cfg = config
    if not isinstance(cfg.dataset, QuadraticData):
        raise ValueError("quadratic_trajectories needs a quadratic dataset")
    if cfg.aggregator != "majority" or cfg.algorithm not in ("sign", "sto", "ef-sto", "full-precision"):
        raise ValueError("only sign, sto, ef-sto and full-precision with majority voting are vectorized")
    if cfg.b is not None and cfg.b.mode == "oracle-max":
        raise ValueError("oracle-max b is not vectorized; use Simulation")
    if cfg.model.init_scale != 0:
        raise ValueError("vectorized runs start from zero weights")
    seeds = [int(s) for s in seeds]
    sim = Simulation(cfg.model_copy(update={"seed": seeds[0]}), track_metrics=False)
    R, M, B, N, d = len(seeds), sim.M, sim.B, sim.N, sim.d
    A = sim.train.X                                   # (M, d) targets
    w = np.zeros((R, d))
    out = np.empty((R, cfg.rounds + 1, d))
    out[:, 0] = w
    b = None if cfg.b is None else sim.sto_params(A).b
    s_res = np.zeros((R, d), dtype=np.int64) if cfg.algorithm in EF_ALGORITHMS else None
    for t in range(cfg.rounds):
        lr = lr_schedule(cfg.lr.kind, cfg.lr.eta0, t, milestones=cfg.lr.milestones, rate=cfg.lr.rate,
                         T=cfg.rounds, d=d)
        G = w[:, None, :] - A[None, :, :]             # (R, M, d)
        target = G.mean(axis=1)
        if cfg.algorithm == "full-precision":
            step = np.concatenate([G, np.repeat(-target[:, None, :], B, axis=1)], axis=1).mean(axis=1)
        else:
            if cfg.algorithm == "sign":
                V = np.where(G >= 0, 1, -1)
            else:
                p_plus = np.clip((b + G) / (2.0 * b), 0.0, 1.0)
                U = np.stack([np.stack([derive_stream(sd, t, m, Purpose.COMPRESS).random(d)
                                        for m in range(M)]) for sd in seeds])
                V = np.where(U < p_plus, 1, -1)
            votes = V.sum(axis=1) + B * np.where(target >= 0, -1, 1)
            if s_res is not None:
                arg = votes + s_res
                broadcast = np.where(arg >= 0, 1, -1)
                s_res = arg - broadcast
                step = (1.0 / N) * broadcast
            else:
                step = 1.0 * np.where(votes >= 0, 1, -1)
        w = w - lr * step
        out[:, t + 1] = w
    return out
