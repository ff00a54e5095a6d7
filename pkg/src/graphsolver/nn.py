"""Graph network mapping incident-field features to surface currents.

Architecture: an upsampling FCN lifts the 9 per-node features to a 64-wide
embedding, a stack of edge-conditioned graph convolutions mixes neighbor
information (the mixing matrix for each edge is produced by a small MLP of
the edge displacement vector), and six downsampling heads emit the real and
imaginary current components.  Everything is float64 numpy with hand-written
reverse-mode gradients so the finite-difference oracle is meaningful.

Parameters live in a flat dict of named arrays (a "ParamSet").  Keys:

    up.w0, up.b0, up.a0, up.w1, up.b1          upsampling FCN
    gcn{l}.w                                   per-layer self weight
    gcn{l}.k_w{0..3}, k_b{0..3}, k_a{0..2}     per-layer kernel MLP
    gcn{l}.a                                   per-layer PReLU slope
    gcn{l}.bn_gamma/bn_beta/bn_mean/bn_var     optional batch norm
    head.{xr,yr,zr,xi,yi,zi}.w0/b0/a0/w1/b1    output heads

bn_mean / bn_var are running statistics (buffers), not trained parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .graph import GraphSample

_MAGIC = b"GSP1"
_VERSION = 1
_BN_EPS = 1e-5

HEADS = ("xr", "yr", "zr", "xi", "yi", "zi")


class NnError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int = 9
    hidden: int = 64
    gcn_layers: int = 4
    kernel_hidden: int = 256
    head_hidden: int = 32
    use_batch_norm: bool = False
    prelu_init: float = 0.25

    def validate(self):
        if min(self.in_dim, self.hidden, self.gcn_layers,
               self.kernel_hidden, self.head_hidden) < 1:
            raise NnError("all ModelConfig dimensions must be positive")


def _uniform(rng, shape, fan_in):
    s = np.sqrt(1.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """Uniform +-sqrt(1/fan_in) weights, PReLU slopes at prelu_init."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    h = cfg.hidden
    p: dict[str, np.ndarray] = {}

    p["up.w0"] = _uniform(rng, (cfg.in_dim, h), cfg.in_dim)
    p["up.b0"] = _uniform(rng, (h,), cfg.in_dim)
    p["up.a0"] = np.full(1, cfg.prelu_init)
    p["up.w1"] = _uniform(rng, (h, h), h)
    p["up.b1"] = _uniform(rng, (h,), h)

    kdims = [3, cfg.kernel_hidden, cfg.kernel_hidden, cfg.kernel_hidden, h * h]
    for l in range(cfg.gcn_layers):
        pre = f"gcn{l}."
        p[pre + "w"] = _uniform(rng, (h, h), h)
        for i in range(4):
            p[pre + f"k_w{i}"] = _uniform(rng, (kdims[i], kdims[i + 1]), kdims[i])
            p[pre + f"k_b{i}"] = _uniform(rng, (kdims[i + 1],), kdims[i])
        for i in range(3):
            p[pre + f"k_a{i}"] = np.full(1, cfg.prelu_init)
        p[pre + "a"] = np.full(1, cfg.prelu_init)
        if cfg.use_batch_norm:
            p[pre + "bn_gamma"] = np.ones(h)
            p[pre + "bn_beta"] = np.zeros(h)
            p[pre + "bn_mean"] = np.zeros(h)
            p[pre + "bn_var"] = np.ones(h)

    for name in HEADS:
        pre = f"head.{name}."
        p[pre + "w0"] = _uniform(rng, (h, cfg.head_hidden), h)
        p[pre + "b0"] = _uniform(rng, (cfg.head_hidden,), h)
        p[pre + "a0"] = np.full(1, cfg.prelu_init)
        p[pre + "w1"] = _uniform(rng, (cfg.head_hidden, 1), cfg.head_hidden)
        p[pre + "b1"] = _uniform(rng, (1,), cfg.head_hidden)

    # dataset standardization buffers, identity until a training run sets them
    p["norm.feat_mu"] = np.zeros(cfg.in_dim)
    p["norm.feat_sigma"] = np.ones(cfg.in_dim)
    p["norm.label_mu"] = np.zeros(6)
    p["norm.label_sigma"] = np.ones(6)
    p["norm.edge_sigma"] = np.ones(3)
    return p


def is_buffer(name: str) -> bool:
    """Running stats and normalization constants: saved but not trained."""
    return (name.endswith("bn_mean") or name.endswith("bn_var")
            or name.startswith("norm."))


def _prelu(x, a):
    return np.where(x > 0.0, x, a * x)


def _prelu_back(x, a, gy):
    gx = np.where(x > 0.0, gy, a * gy)
    ga = np.array([np.sum(np.where(x > 0.0, 0.0, x * gy))])
    return gx, ga


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise NnError(f"non-finite values after {name}")


# ---------------------------------------------------------------------------
# kernel MLP (3 -> kh -> kh -> kh -> hidden^2, PReLU after the first three)
# ---------------------------------------------------------------------------

def kernel_fcn(kp: dict, r_e: np.ndarray) -> np.ndarray:
    """Edge kernel: displacement 3-vector(s) -> hidden x hidden matrices.

    kp maps "w0".."w3", "b0".."b3", "a0".."a2" to arrays.  Accepts a single
    3-vector or a batch (...,3); returns (hidden,hidden) or (...,hidden,hidden)
    reshaped row-major from the final layer.
    """
    r = np.asarray(r_e, dtype=np.float64)
    single = r.ndim == 1
    x = np.atleast_2d(r)
    if x.shape[-1] != kp["w0"].shape[0]:
        raise NnError("kernel input width mismatch")
    for i in range(3):
        x = _prelu(x @ kp[f"w{i}"] + kp[f"b{i}"], kp[f"a{i}"])
    out = x @ kp["w3"] + kp["b3"]
    h = int(round(np.sqrt(out.shape[-1])))
    if h * h != out.shape[-1]:
        raise NnError("kernel output size is not a square")
    out = out.reshape(out.shape[:-1] + (h, h))
    return out[0] if single else out


def _kernel_forward(kp, x):
    """Batched kernel MLP keeping pre-activations for the backward pass."""
    cache = {"x": x}
    for i in range(3):
        z = x @ kp[f"w{i}"] + kp[f"b{i}"]
        cache[f"z{i}"] = z
        x = _prelu(z, kp[f"a{i}"])
        cache[f"p{i}"] = x
    out = x @ kp["w3"] + kp["b3"]
    return out, cache


def _kernel_backward(kp, cache, gout):
    grads = {}
    grads["w3"] = cache["p2"].T @ gout
    grads["b3"] = gout.sum(axis=0)
    gx = gout @ kp["w3"].T
    for i in (2, 1, 0):
        gz, grads[f"a{i}"] = _prelu_back(cache[f"z{i}"], kp[f"a{i}"], gx)
        inp = cache["x"] if i == 0 else cache[f"p{i - 1}"]
        grads[f"w{i}"] = inp.T @ gz
        grads[f"b{i}"] = gz.sum(axis=0)
        gx = gz @ kp[f"w{i}"].T
    return grads, gx


def _subparams(params, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


# ---------------------------------------------------------------------------
# graph convolution
# ---------------------------------------------------------------------------

def graph_conv(feats: np.ndarray, adjacency: np.ndarray,
               edge_vectors: np.ndarray, W: np.ndarray, kp: dict) -> np.ndarray:
    """F'(v_i) = W F(v_i) + mean over neighbors j of F(v_j) K(r_ij).

    Neighborless nodes keep only the self term.  F rows are node features;
    the self term applies W on the left of the column view, i.e. F @ W.T.
    """
    M = len(feats)
    if len(adjacency) and adjacency.max() >= M:
        raise NnError("adjacency references a missing node")
    out = feats @ W.T
    if len(adjacency) == 0:
        return out
    src = np.concatenate([adjacency[:, 0], adjacency[:, 1]])
    dst = np.concatenate([adjacency[:, 1], adjacency[:, 0]])
    vecs = np.concatenate([edge_vectors, -edge_vectors])
    K = kernel_fcn(kp, vecs)
    msg = np.einsum("ec,ecd->ed", feats[src], K)
    agg = np.zeros_like(out)
    np.add.at(agg, dst, msg)
    deg = np.zeros(M)
    np.add.at(deg, dst, 1.0)
    out += agg / np.maximum(deg, 1.0)[:, None]
    return out


def _gcn_layer_forward(params, pre, feats, src, dst, vecs, deg):
    kp = _subparams(params, pre + "k_")
    out = feats @ params[pre + "w"].T
    cache = {"feats": feats}
    if len(src):
        kout, kcache = _kernel_forward(kp, vecs)
        h = feats.shape[1]
        K = kout.reshape(-1, h, h)
        msg = np.einsum("ec,ecd->ed", feats[src], K)
        agg = np.zeros_like(out)
        np.add.at(agg, dst, msg)
        out += agg / deg[:, None]
        cache.update(K=K, kcache=kcache)
    return out, cache


def _gcn_layer_backward(params, pre, cache, src, dst, deg, gout, grads):
    feats = cache["feats"]
    grads[pre + "w"] = gout.T @ feats
    gfeats = gout @ params[pre + "w"]
    if len(src):
        kp = _subparams(params, pre + "k_")
        gmsg = gout[dst] / deg[dst][:, None]
        K = cache["K"]
        np.add.at(gfeats, src, np.einsum("ed,ecd->ec", gmsg, K))
        gK = np.einsum("ec,ed->ecd", feats[src], gmsg)
        kgrads, _ = _kernel_backward(kp, cache["kcache"],
                                     gK.reshape(len(src), -1))
        for k, v in kgrads.items():
            grads[pre + "k_" + k] = v
    return gfeats


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

def _model_forward(params, cfg, g: GraphSample, training: bool):
    feats = np.asarray(g.features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != cfg.in_dim:
        raise NnError(f"expected M x {cfg.in_dim} features, got {feats.shape}")
    M = len(feats)
    caches = {"M": M}

    if len(g.adjacency):
        src = np.concatenate([g.adjacency[:, 0], g.adjacency[:, 1]])
        dst = np.concatenate([g.adjacency[:, 1], g.adjacency[:, 0]])
        vecs = np.concatenate([g.edge_vectors, -g.edge_vectors])
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        vecs = np.zeros((0, 3))
    deg = np.zeros(M)
    np.add.at(deg, dst, 1.0)
    deg = np.maximum(deg, 1.0)
    caches.update(src=src, dst=dst, vecs=vecs, deg=deg)

    # upsampling FCN
    z0 = feats @ params["up.w0"] + params["up.b0"]
    p0 = _prelu(z0, params["up.a0"])
    x = p0 @ params["up.w1"] + params["up.b1"]
    _check_finite(x, "up")
    caches.update(feats=feats, up_z0=z0, up_p0=p0)

    # graph convolution trunk, PReLU (optionally batch norm first) per layer
    for l in range(cfg.gcn_layers):
        pre = f"gcn{l}."
        x, c = _gcn_layer_forward(params, pre, x, src, dst, vecs, deg)
        _check_finite(x, pre + "conv")
        if cfg.use_batch_norm:
            if training:
                mu = x.mean(axis=0)
                var = x.var(axis=0)
            else:
                mu = params[pre + "bn_mean"]
                var = params[pre + "bn_var"]
            ivar = 1.0 / np.sqrt(var + _BN_EPS)
            xhat = (x - mu) * ivar
            c.update(bn_x=x, bn_xhat=xhat, bn_ivar=ivar, bn_mu=mu, bn_var=var)
            x = params[pre + "bn_gamma"] * xhat + params[pre + "bn_beta"]
        c["act_z"] = x
        x = _prelu(x, params[pre + "a"])
        caches[pre] = c
    caches["trunk"] = x

    # six heads, one scalar column each, in label column order
    cols = []
    for name in HEADS:
        pre = f"head.{name}."
        z0 = x @ params[pre + "w0"] + params[pre + "b0"]
        p0 = _prelu(z0, params[pre + "a0"])
        y = p0 @ params[pre + "w1"] + params[pre + "b1"]
        caches[pre] = {"z0": z0, "p0": p0}
        cols.append(y)
    pred = np.concatenate(cols, axis=1)
    _check_finite(pred, "heads")
    return pred, caches


def forward(params: dict, cfg: ModelConfig, g: GraphSample,
            training: bool = False) -> np.ndarray:
    """Predict the M x 6 label block for a graph sample."""
    pred, _ = _model_forward(params, cfg, g, training)
    return pred


def normalize_features(params: dict, feats: np.ndarray) -> np.ndarray:
    return (feats - params["norm.feat_mu"]) / params["norm.feat_sigma"]


def normalize_labels(params: dict, labels: np.ndarray) -> np.ndarray:
    return (labels - params["norm.label_mu"]) / params["norm.label_sigma"]


def denormalize_output(params: dict, pred: np.ndarray) -> np.ndarray:
    return pred * params["norm.label_sigma"] + params["norm.label_mu"]


def predict(params: dict, cfg: ModelConfig, g: GraphSample) -> np.ndarray:
    """Inference with the model's stored standardization applied."""
    from dataclasses import replace as _replace
    g2 = _replace(g, features=normalize_features(params, g.features),
                  edge_vectors=g.edge_vectors / params["norm.edge_sigma"])
    return denormalize_output(params, forward(params, cfg, g2))


def mse_loss(pred: np.ndarray, label: np.ndarray) -> float:
    pred = np.asarray(pred)
    label = np.asarray(label)
    if pred.shape != label.shape:
        raise NnError(f"shape mismatch {pred.shape} vs {label.shape}")
    return float(np.sum((pred - label) ** 2) / pred.size)


def loss_and_grads(params: dict, cfg: ModelConfig, g: GraphSample,
                   label: np.ndarray, training: bool = True,
                   node_weights: np.ndarray | None = None):
    """MSE loss, exact gradients, and fresh batch-norm statistics.

    Returns (loss, grads, bn_stats) where bn_stats maps running-stat names
    to the batch mean / unbiased variance observed this pass (empty when
    batch norm is off or training is False).  node_weights generalizes the
    loss to sum_i w_i |pred_i - label_i|^2 so a disjoint union of graphs can
    reproduce the mean of per-graph MSE values; default w_i = 1/(6M).
    """
    label = np.asarray(label, dtype=np.float64)
    pred, caches = _model_forward(params, cfg, g, training)
    if pred.shape != label.shape:
        raise NnError(f"label shape {label.shape} does not match {pred.shape}")
    if node_weights is None:
        node_weights = np.full(len(pred), 1.0 / pred.size)
    else:
        node_weights = np.asarray(node_weights, dtype=np.float64)
    loss = float(np.sum(node_weights[:, None] * (pred - label) ** 2))
    gpred = 2.0 * node_weights[:, None] * (pred - label)

    grads = {}
    x = caches["trunk"]
    gx = np.zeros_like(x)
    for j, name in enumerate(HEADS):
        pre = f"head.{name}."
        c = caches[pre]
        gy = gpred[:, j:j + 1]
        grads[pre + "w1"] = c["p0"].T @ gy
        grads[pre + "b1"] = gy.sum(axis=0)
        gp0 = gy @ params[pre + "w1"].T
        gz0, grads[pre + "a0"] = _prelu_back(c["z0"], params[pre + "a0"], gp0)
        grads[pre + "w0"] = x.T @ gz0
        grads[pre + "b0"] = gz0.sum(axis=0)
        gx += gz0 @ params[pre + "w0"].T

    bn_stats = {}
    src, dst, deg = caches["src"], caches["dst"], caches["deg"]
    for l in reversed(range(cfg.gcn_layers)):
        pre = f"gcn{l}."
        c = caches[pre]
        gz, grads[pre + "a"] = _prelu_back(c["act_z"], params[pre + "a"], gx)
        if cfg.use_batch_norm:
            xhat = c["bn_xhat"]
            grads[pre + "bn_gamma"] = (gz * xhat).sum(axis=0)
            grads[pre + "bn_beta"] = gz.sum(axis=0)
            gxhat = gz * params[pre + "bn_gamma"]
            if training:
                M = len(xhat)
                gz = (c["bn_ivar"] / M) * (
                    M * gxhat - gxhat.sum(axis=0)
                    - xhat * (gxhat * xhat).sum(axis=0))
                bessel = M / max(M - 1, 1)
                bn_stats[pre + "bn_mean"] = c["bn_mu"]
                bn_stats[pre + "bn_var"] = c["bn_var"] * bessel
            else:
                gz = gxhat * c["bn_ivar"]
        gx = _gcn_layer_backward(params, pre, c, src, dst, deg, gz, grads)

    gz1 = gx
    grads["up.w1"] = caches["up_p0"].T @ gz1
    grads["up.b1"] = gz1.sum(axis=0)
    gp0 = gz1 @ params["up.w1"].T
    gz0, grads["up.a0"] = _prelu_back(caches["up_z0"], params["up.a0"], gp0)
    grads["up.w0"] = caches["feats"].T @ gz0
    grads["up.b0"] = gz0.sum(axis=0)
    return loss, grads, bn_stats


def backward(params: dict, cfg: ModelConfig, g: GraphSample,
             label: np.ndarray) -> dict:
    """Gradient ParamSet for the MSE loss (training-mode batch norm)."""
    _, grads, _ = loss_and_grads(params, cfg, g, label)
    return grads


# ---------------------------------------------------------------------------
# parameter container: magic, version, config JSON, named f64 tensors
# ---------------------------------------------------------------------------

def save_params(params: dict, cfg: ModelConfig) -> bytes:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    out = [_MAGIC, struct.pack("<II", _VERSION, len(blob)), blob,
           struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def load_params(data: bytes):
    """Inverse of save_params: (ParamSet, ModelConfig)."""
    if data[:4] != _MAGIC:
        raise NnError("not a parameter container")
    version, clen = struct.unpack("<II", data[4:12])
    if version != _VERSION:
        raise NnError(f"unsupported container version {version}")
    cfg = ModelConfig(**json.loads(data[12:12 + clen].decode("utf-8")))
    off = 12 + clen
    (count,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", data[off:off + 2])
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        rank = data[off]
        off += 1
        shape = struct.unpack(f"<{rank}I", data[off:off + 4 * rank])
        off += 4 * rank
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        params[name] = np.frombuffer(
            data[off:off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    expected = set(init_params(cfg, 0))
    if set(params) != expected:
        raise NnError("parameter names do not match the stored config")
    return params, cfg
