"""Training loop: Adam with step-decayed learning rate over graph datasets.

Mini-batches are disjoint unions of graphs (block-diagonal adjacency), so a
batched forward pass is exactly equivalent to per-sample passes; batch-norm
statistics, when enabled, span the union.  The per-step objective is the
mean of the per-graph MSE values.  Model selection keeps the parameters
with the best test MSE; the final-epoch parameters are returned as well.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import GraphSample, labels_to_currents
from . import nn
from .nn import ModelConfig, NnError


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    base_lr: float = 0.001
    decay: float = 0.8
    decay_every: int = 20
    batch_size: int = 8
    seed: int = 0
    use_batch_norm: bool = False
    warm_start: str | None = None       # parameter-container path
    normalize: bool = True              # standardize features/labels
    freeze_trunk: bool = False          # heads-only training (ablation)

    def validate(self):
        if self.epochs < 1:
            raise TrainError("epochs must be at least 1")
        if not (0.0 < self.decay <= 1.0):
            raise TrainError("decay must lie in (0, 1]")
        if self.batch_size < 1 or self.decay_every < 1 or self.base_lr <= 0:
            raise TrainError("invalid TrainConfig")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainReport:
    train_mse: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def to_csv(self) -> str:
        # wall-clock timings stay out of the CSV so that reruns are
        # byte-identical; they remain available on the report object
        buf = io.StringIO()
        buf.write("epoch,train_mse,test_mse,lr\n")
        for i in range(len(self.train_mse)):
            buf.write(f"{i},{self.train_mse[i]:.10e},{self.test_mse[i]:.10e},"
                      f"{self.lr[i]:.10e}\n")
        return buf.getvalue()


@dataclass
class EvalMetrics:
    mean_mse: float
    per_sample_mse: np.ndarray
    rel_l2: np.ndarray                   # per-sample current error

    @property
    def mean_rel_l2(self) -> float:
        return float(self.rel_l2.mean())


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise TrainError("epoch must be non-negative")
    return cfg.base_lr * cfg.decay ** (epoch // cfg.decay_every)


def init_adam(params: dict) -> AdamState:
    m = {k: np.zeros_like(v) for k, v in params.items() if not nn.is_buffer(k)}
    v = {k: np.zeros_like(p) for k, p in params.items() if not nn.is_buffer(k)}
    return AdamState(m=m, v=v)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam update; returns new (params, state)."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient for {k}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p = dict(params)
    new_m = dict(state.m)
    new_v = dict(state.v)
    for k, g in grads.items():
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_m[k] = m
        new_v[k] = v
        new_p[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new_p, AdamState(m=new_m, v=new_v, t=t,
                            beta1=b1, beta2=b2, eps=state.eps)


def batch_graphs(samples: list) -> tuple:
    """Disjoint union of graphs; returns (union, labels, node_weights).

    node_weights implement the mean of per-graph MSE: each node of graph b
    with M_b nodes weighs 1 / (6 M_b B).
    """
    if not samples:
        raise TrainError("empty batch")
    B = len(samples)
    adj, vecs, feats, labels, weights = [], [], [], [], []
    off = 0
    for g in samples:
        if g.labels is None:
            raise TrainError("training requires labeled samples")
        adj.append(g.adjacency + off)
        vecs.append(g.edge_vectors)
        feats.append(g.features)
        labels.append(g.labels)
        weights.append(np.full(g.node_count, 1.0 / (6 * g.node_count * B)))
        off += g.node_count
    union = GraphSample(adjacency=np.concatenate(adj),
                        edge_vectors=np.concatenate(vecs),
                        features=np.concatenate(feats))
    return union, np.concatenate(labels), np.concatenate(weights)


def _dataset_norm_stats(samples: list):
    feats = np.concatenate([g.features for g in samples])
    labels = np.concatenate([g.labels for g in samples])
    edges = np.concatenate([g.edge_vectors for g in samples])
    stats = {
        "norm.feat_mu": feats.mean(axis=0),
        "norm.feat_sigma": np.maximum(feats.std(axis=0), 1e-12),
        "norm.label_mu": labels.mean(axis=0),
        "norm.label_sigma": np.maximum(labels.std(axis=0), 1e-12),
        "norm.edge_sigma": np.maximum(edges.std(axis=0), 1e-12),
    }
    return stats


def _normalized_view(params: dict, g: GraphSample) -> GraphSample:
    feats = nn.normalize_features(params, g.features)
    labels = None
    if g.labels is not None:
        labels = nn.normalize_labels(params, g.labels)
    return replace(g, features=feats, labels=labels,
                   edge_vectors=g.edge_vectors / params["norm.edge_sigma"])


def evaluate(params: dict, model_cfg: ModelConfig, dataset: list) -> EvalMetrics:
    """Per-sample MSE in the model's normalized label space plus the
    relative L2 error of the denormalized currents."""
    if not dataset:
        raise TrainError("empty dataset")
    mses = np.zeros(len(dataset))
    rels = np.zeros(len(dataset))
    for i, g in enumerate(dataset):
        if g.labels is None:
            raise TrainError("evaluate requires labeled samples")
        gv = _normalized_view(params, g)
        pred = nn.forward(params, model_cfg, gv)
        mses[i] = nn.mse_loss(pred, gv.labels)
        jp = labels_to_currents(nn.denormalize_output(params, pred))
        jm = labels_to_currents(g.labels)
        rels[i] = np.linalg.norm(jp - jm) / max(np.linalg.norm(jm), 1e-300)
    return EvalMetrics(mean_mse=float(mses.mean()),
                       per_sample_mse=mses, rel_l2=rels)


def train(dataset_train: list, dataset_test: list, cfg: TrainConfig,
          model_cfg: ModelConfig | None = None):
    """Run the optimization loop.

    Returns (best_params, report, final_params).  best_params minimizes the
    test MSE over epochs; ties keep the earlier epoch.
    """
    cfg.validate()
    if not dataset_train or not dataset_test:
        raise TrainError("both dataset splits must be non-empty")
    if model_cfg is None:
        model_cfg = ModelConfig()
    model_cfg = replace(model_cfg, use_batch_norm=cfg.use_batch_norm)

    if cfg.warm_start is not None:
        with open(cfg.warm_start, "rb") as f:
            params, loaded_cfg = nn.load_params(f.read())
        if replace(loaded_cfg, use_batch_norm=cfg.use_batch_norm) != model_cfg:
            raise TrainError("warm-start architecture is incompatible")
        model_cfg = loaded_cfg
        cfg = replace(cfg, use_batch_norm=model_cfg.use_batch_norm)
    else:
        params = nn.init_params(model_cfg, cfg.seed)
        if cfg.normalize:
            params.update(_dataset_norm_stats(dataset_train))

    trainable = None
    if cfg.freeze_trunk:
        trainable = {k for k in params if k.startswith("head.")}

    state = init_adam(params)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    best = (np.inf, {k: v.copy() for k, v in params.items()})

    n = len(dataset_train)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            batch = [dataset_train[i] for i in order[s:s + cfg.batch_size]]
            union, labels, weights = batch_graphs(batch)
            gv = _normalized_view(params, replace(union, labels=labels))
            loss, grads, bn_stats = nn.loss_and_grads(
                params, model_cfg, gv, gv.labels, training=True,
                node_weights=weights)
            losses.append(loss)
            for k, stat in bn_stats.items():
                params[k] = 0.9 * params[k] + 0.1 * stat
            if trainable is not None:
                grads = {k: g for k, g in grads.items() if k in trainable}
            params, state = adam_step(params, grads, state, lr)
        test = evaluate(params, model_cfg, dataset_test)
        report.train_mse.append(float(np.mean(losses)))
        report.test_mse.append(test.mean_mse)
        report.lr.append(lr)
        report.seconds.append(time.perf_counter() - t0)
        if test.mean_mse < best[0]:
            best = (test.mean_mse, {k: v.copy() for k, v in params.items()})

    return best[1], report, params
