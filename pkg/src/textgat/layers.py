"""Model math: masked multi-head attention and GCN layers, explicit gradients.

Every forward returns a cache holding the intermediates its backward needs.
Neighborhoods come from the adjacency pattern (self-loops included), so
attention is computed only over first-order neighbors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import SparseMatrix, leaky_relu, softmax_row, spmm

AGGREGATIONS = ("concat", "average")


def glorot_uniform(rng, shape) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); vectors use fan_out = 1."""
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) == 2 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(x))


def _elu_grad_from_output(y: np.ndarray) -> np.ndarray:
    # For y = elu(x): dy/dx = 1 when x > 0 else exp(x) = y + 1.
    return np.where(y > 0.0, 1.0, y + 1.0)


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    input_dim: int
    classes: int
    hidden_units: int = 8
    heads: int = 8
    output_heads: int = 1
    dropout: float = 0.5
    leaky_alpha: float = 0.2
    feature_mode: str = "onehot"
    attend_edge_weights: bool = False

    def __post_init__(self):
        if self.architecture not in ("gat", "gcn"):
            raise ValueError(f"unknown architecture: {self.architecture!r}")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout rate must be in [0, 1)")
        if self.heads < 1 or self.output_heads < 1:
            raise ValueError("head counts must be >= 1")
        if self.feature_mode not in ("onehot", "dense"):
            raise ValueError(f"unknown feature mode: {self.feature_mode!r}")


@dataclass
class GatLayerParams:
    """Per-head weight matrices (F x F') and attention kernels (2F' vectors)."""

    weights: list
    kernels: list
    leaky_alpha: float = 0.2
    aggregation: str = "concat"

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation: {self.aggregation!r}")
        if len(self.weights) != len(self.kernels) or not self.weights:
            raise ValueError("need one kernel per head and at least one head")

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def out_dim(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def init(cls, rng, in_dim, out_dim, heads, *, leaky_alpha=0.2, aggregation="concat"):
        weights = [glorot_uniform(rng, (in_dim, out_dim)) for _ in range(heads)]
        kernels = [glorot_uniform(rng, (2 * out_dim,)) for _ in range(heads)]
        return cls(weights=weights, kernels=kernels,
                   leaky_alpha=leaky_alpha, aggregation=aggregation)


@dataclass
class GcnLayerParams:
    weight: np.ndarray
    activation: str  # "relu" | "softmax"


@dataclass(frozen=True)
class AttentionRecord:
    """Neighborhoods and per-head attention rows (pre-dropout coefficients)."""

    indptr: np.ndarray
    indices: np.ndarray
    alphas: tuple

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def row(self, head: int, i: int) -> np.ndarray:
        return self.alphas[head][self.indptr[i]:self.indptr[i + 1]]

    def row_sums(self, head: int) -> np.ndarray:
        return np.add.reduceat(self.alphas[head], self.indptr[:-1])


def dropout(h, rate: float, rng, training: bool):
    """Inverted dropout: zero with probability ``rate``, scale by 1/(1-rate).

    Identity in eval mode. Returns (output, keep_mask); the mask is None
    when nothing was dropped. Sparse inputs are thinned entry-wise.
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return h, None
    keep = 1.0 - rate
    if isinstance(h, SparseMatrix):
        mask = rng.random(h.data.shape) >= rate
        return h.with_data(h.data * mask / keep), mask
    mask = rng.random(h.shape) >= rate
    return h * mask / keep, mask


def attention_logits(h_i: np.ndarray, h_j: np.ndarray, params: GatLayerParams,
                     head: int) -> float:
    """e_ij = leaky_relu(a . [W h_i || W h_j]) for a single node pair."""
    w = params.weights[head]
    a = params.kernels[head]
    f_out = w.shape[1]
    z_i = h_i @ w
    z_j = h_j @ w
    s = float(a[:f_out] @ z_i + a[f_out:] @ z_j)
    return leaky_relu(s, params.leaky_alpha)


def attention_coefficients(logits) -> np.ndarray:
    """Stabilized softmax over one neighborhood's logits."""
    return softmax_row(np.asarray(logits, dtype=np.float64))


def _project(features, w: np.ndarray) -> np.ndarray:
    if isinstance(features, SparseMatrix):
        return spmm(features, w)
    return np.asarray(features, dtype=np.float64) @ w


def _transpose_features(features):
    if isinstance(features, SparseMatrix):
        return features.transpose()
    return np.asarray(features, dtype=np.float64).T


def _feature_grad(features_t, m: np.ndarray) -> np.ndarray:
    if isinstance(features_t, SparseMatrix):
        return spmm(features_t, m)
    return features_t @ m


def _column_groups(indices: np.ndarray):
    """Stable grouping of edges by target column, for deterministic scatters."""
    order = np.argsort(indices, kind="stable")
    sorted_cols = indices[order]
    starts = np.flatnonzero(
        np.concatenate(([True], sorted_cols[1:] != sorted_cols[:-1])))
    return order, starts, sorted_cols[starts]


def _column_scatter(values: np.ndarray, groups, n_rows: int) -> np.ndarray:
    """out[c] = sum over edges e with indices[e] == c of values[e] (fixed order)."""
    order, starts, unique_cols = groups
    sums = np.add.reduceat(values[order], starts, axis=0)
    out = np.zeros((n_rows, values.shape[1]), dtype=np.float64)
    out[unique_cols] = sums
    return out


def gat_layer_forward(features, pattern: SparseMatrix, params: GatLayerParams,
                      *, training: bool = False, dropout_rate: float = 0.0,
                      rng=None, edge_weights=None):
    """One masked attention layer over the pattern's neighborhoods.

    Per head with z = features @ W and neighbors j of node i:
        e_ij  = leaky_relu(a[:F'] . z_i + a[F':] . z_j)  (+ edge weight if given)
        a_ij  = exp(e_ij) / sum_{m in N_i} exp(e_im)
        out_i = sum_j a_ij z_j
    ``concat`` layers apply ELU per head and concatenate the results;
    the ``average`` (output) layer averages head aggregates and applies a
    row softmax. Returns (output, AttentionRecord, cache).
    """
    n = pattern.shape[0]
    feat_rows = features.shape[0]
    if feat_rows != n:
        raise ValueError(f"feature rows {feat_rows} != nodes {n}")
    indptr, indices = pattern.indptr, pattern.indices
    if np.any(np.diff(indptr) == 0):
        raise ValueError("every node needs a non-empty neighborhood (self-loop)")
    if edge_weights is not None:
        edge_weights = np.asarray(edge_weights, dtype=np.float64)
        if edge_weights.shape != indices.shape:
            raise ValueError("edge weights must align with the pattern entries")
    if training and dropout_rate > 0.0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    row = pattern.row_ids()
    keep = 1.0 - dropout_rate

    head_caches = []
    aggregates = []
    alphas = []
    for w, a in zip(params.weights, params.kernels):
        f_out = w.shape[1]
        z = _project(features, w)
        s = (z @ a[:f_out])[row] + (z @ a[f_out:])[indices]
        e = np.where(s >= 0.0, s, params.leaky_alpha * s)
        if edge_weights is not None:
            e = e + edge_weights
        m = np.maximum.reduceat(e, indptr[:-1])
        ex = np.exp(e - m[row])
        denom = np.add.reduceat(ex, indptr[:-1])
        alpha = ex / denom[row]
        if training and dropout_rate > 0.0:
            mask = rng.random(alpha.shape) >= dropout_rate
            alpha_used = alpha * mask / keep
        else:
            mask = None
            alpha_used = alpha
        z_dst = z[indices]
        agg = np.add.reduceat(alpha_used[:, None] * z_dst, indptr[:-1], axis=0)
        head_caches.append({"z": z, "z_dst": z_dst, "s": s, "alpha": alpha,
                            "alpha_used": alpha_used, "mask": mask})
        aggregates.append(agg)
        alphas.append(alpha)

    if params.aggregation == "concat":
        activated = [_elu(agg) for agg in aggregates]
        out = np.concatenate(activated, axis=1)
        out_cache = activated
    else:
        mean = aggregates[0].copy()
        for agg in aggregates[1:]:
            mean += agg
        mean /= params.heads
        out = softmax_row(mean)
        out_cache = out

    record = AttentionRecord(indptr=indptr, indices=indices, alphas=tuple(alphas))
    cache = {
        "params": params,
        "features": features,
        "indptr": indptr,
        "indices": indices,
        "row": row,
        "col_groups": _column_groups(indices),
        "heads": head_caches,
        "out": out_cache,
        "dropout_rate": dropout_rate if training else 0.0,
        "need_input_grad": not isinstance(features, SparseMatrix),
    }
    return out, record, cache


def gat_layer_backward(d_out: np.ndarray, cache):
    """Gradients of gat_layer_forward w.r.t. parameters and the dense input.

    Returns {"weights": [...], "kernels": [...], "d_input": array or None}.
    """
    if cache is None:
        raise ValueError("missing forward cache")
    params = cache["params"]
    indptr, indices, row = cache["indptr"], cache["indices"], cache["row"]
    features = cache["features"]
    keep = 1.0 - cache["dropout_rate"]
    f_out = params.out_dim

    if params.aggregation == "concat":
        d_aggs = []
        for k, y in enumerate(cache["out"]):
            d_slice = d_out[:, k * f_out:(k + 1) * f_out]
            d_aggs.append(d_slice * _elu_grad_from_output(y))
    else:
        probs = cache["out"]
        inner = (d_out * probs).sum(axis=1, keepdims=True)
        d_mean = probs * (d_out - inner)
        d_aggs = [d_mean / params.heads] * params.heads

    groups = cache["col_groups"]
    n = len(indptr) - 1
    features_t = _transpose_features(features)
    d_weights = []
    d_kernels = []
    d_input = np.zeros_like(features, dtype=np.float64) if cache["need_input_grad"] else None
    for k, hc in enumerate(cache["heads"]):
        g = d_aggs[k]
        z, z_dst, s, alpha = hc["z"], hc["z_dst"], hc["s"], hc["alpha"]
        a = params.kernels[k]
        a_src, a_dst = a[:f_out], a[f_out:]
        g_row = g[row]

        # Aggregation: out_i = sum_j alpha_used_ij z_j.
        d_alpha_used = np.einsum("ef,ef->e", g_row, z_dst)

        if hc["mask"] is not None:
            d_alpha = d_alpha_used * hc["mask"] / keep
        else:
            d_alpha = d_alpha_used

        # Row softmax: de_ij = alpha_ij (d_alpha_ij - sum_m alpha_im d_alpha_im).
        weighted = alpha * d_alpha
        row_dot = np.add.reduceat(weighted, indptr[:-1])
        de = alpha * (d_alpha - row_dot[row])
        ds = de * np.where(s >= 0.0, 1.0, params.leaky_alpha)

        # Kernel gradients; the source half reduces row-wise first:
        # sum_e ds_e z[row_e] = sum_i (sum_{e in row i} ds_e) z_i.
        row_ds = np.add.reduceat(ds, indptr[:-1])
        d_kernels.append(np.concatenate([row_ds @ z, ds @ z_dst]))

        # dz: source-side logit term is row-wise; the aggregation and
        # destination-side logit terms scatter to columns.
        dz = row_ds[:, None] * a_src[None, :]
        dz += _column_scatter(
            hc["alpha_used"][:, None] * g_row + ds[:, None] * a_dst[None, :],
            groups, n)

        d_weights.append(_feature_grad(features_t, dz))
        if d_input is not None:
            d_input += dz @ params.weights[k].T

    return {"weights": d_weights, "kernels": d_kernels, "d_input": d_input}


def gcn_forward(features, a_hat: SparseMatrix, params0: GcnLayerParams,
                params1: GcnLayerParams, *, training: bool = False,
                dropout_rate: float = 0.0, rng=None):
    """softmax(A relu(A X W0) W1) with A the symmetric normalized adjacency."""
    if features.shape[0] != a_hat.shape[1]:
        raise ValueError(f"feature rows {features.shape[0]} != nodes {a_hat.shape[1]}")
    if params0.weight.shape[1] != params1.weight.shape[0]:
        raise ValueError("hidden widths of the two layers disagree")
    x, x_mask = dropout(features, dropout_rate, rng, training)
    t0 = spmm(a_hat, _project(x, params0.weight))
    h1 = np.maximum(t0, 0.0)
    h1d, h1_mask = dropout(h1, dropout_rate, rng, training)
    t1 = spmm(a_hat, h1d @ params1.weight)
    probs = softmax_row(t1)
    cache = {
        "x": x, "t0": t0, "h1d": h1d, "h1_mask": h1_mask, "probs": probs,
        "a_hat": a_hat, "params0": params0, "params1": params1,
        "dropout_rate": dropout_rate if training else 0.0,
        "need_input_grad": not isinstance(features, SparseMatrix),
    }
    return probs, cache


def gcn_backward(d_probs: np.ndarray, cache):
    """Gradients of gcn_forward; relies on a_hat being symmetric."""
    if cache is None:
        raise ValueError("missing forward cache")
    probs, a_hat = cache["probs"], cache["a_hat"]
    keep = 1.0 - cache["dropout_rate"]
    inner = (d_probs * probs).sum(axis=1, keepdims=True)
    dt1 = probs * (d_probs - inner)
    m1 = spmm(a_hat, dt1)
    dw1 = cache["h1d"].T @ m1
    dh1 = m1 @ cache["params1"].weight.T
    if cache["h1_mask"] is not None:
        dh1 = dh1 * cache["h1_mask"] / keep
    dt0 = dh1 * (cache["t0"] > 0.0)
    m0 = spmm(a_hat, dt0)
    dw0 = _feature_grad(_transpose_features(cache["x"]), m0)
    d_input = m0 @ cache["params0"].weight.T if cache["need_input_grad"] else None
    return {"weights": [dw0, dw1], "d_input": d_input}


def masked_cross_entropy(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray,
                         *, l2_params=(), l2: float = 0.0) -> float:
    """Mean -ln p[node, label] over masked nodes, plus l2 * sum of squares."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("empty mask")
    data = float(np.mean(-np.log(probs[idx, labels[idx]])))
    reg = 0.0
    for p in l2_params:
        reg += float(np.sum(p * p))
    return data + l2 * reg


def masked_cross_entropy_backward(probs: np.ndarray, labels: np.ndarray,
                                  mask: np.ndarray) -> np.ndarray:
    """d(data term)/d(probs); the l2 gradient (2*l2*W) is added by the caller."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("empty mask")
    d = np.zeros_like(probs)
    d[idx, labels[idx]] = -1.0 / (idx.size * probs[idx, labels[idx]])
    return d


class GatModel:
    """Two-layer masked multi-head attention classifier.

    Hidden layer: ``heads`` attention heads of width ``hidden_units``, ELU,
    concatenated. Output layer: ``output_heads`` heads averaged and pushed
    through a row softmax.
    """

    def __init__(self, config: ModelConfig, layer1: GatLayerParams,
                 layer2: GatLayerParams):
        self.config = config
        self.layer1 = layer1
        self.layer2 = layer2

    @classmethod
    def init(cls, config: ModelConfig, rng) -> "GatModel":
        layer1 = GatLayerParams.init(
            rng, config.input_dim, config.hidden_units, config.heads,
            leaky_alpha=config.leaky_alpha, aggregation="concat")
        layer2 = GatLayerParams.init(
            rng, config.hidden_units * config.heads, config.classes,
            config.output_heads, leaky_alpha=config.leaky_alpha,
            aggregation="average")
        return cls(config, layer1, layer2)

    def parameters(self) -> dict:
        out = {}
        for tag, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for k in range(layer.heads):
                out[f"{tag}.head{k}.weight"] = layer.weights[k]
                out[f"{tag}.head{k}.kernel"] = layer.kernels[k]
        return out

    def l2_parameter_names(self, scope: str = "first_layer") -> list:
        names = list(self.parameters())
        if scope == "first_layer":
            return [n for n in names if n.startswith("layer1.")]
        if scope == "all":
            return names
        raise ValueError(f"unknown l2 scope: {scope!r}")

    def load_parameters(self, values: dict) -> None:
        own = self.parameters()
        if set(values) != set(own):
            raise ValueError("parameter names do not match this model")
        for name, arr in values.items():
            if own[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            own[name][...] = arr

    def forward(self, features, pattern: SparseMatrix, *, training: bool = False,
                rng=None, edge_weights=None):
        rate = self.config.dropout
        x, _ = dropout(features, rate, rng, training)
        h1, rec1, c1 = gat_layer_forward(
            x, pattern, self.layer1, training=training, dropout_rate=rate,
            rng=rng, edge_weights=edge_weights)
        h1d, h1_mask = dropout(h1, rate, rng, training)
        probs, rec2, c2 = gat_layer_forward(
            h1d, pattern, self.layer2, training=training, dropout_rate=rate,
            rng=rng, edge_weights=edge_weights)
        cache = {"c1": c1, "c2": c2, "h1_mask": h1_mask,
                 "rate": rate if training else 0.0, "records": (rec1, rec2)}
        return probs, cache

    def backward(self, d_probs: np.ndarray, cache) -> dict:
        if cache is None:
            raise ValueError("missing forward cache")
        g2 = gat_layer_backward(d_probs, cache["c2"])
        d_h1 = g2["d_input"]
        if cache["h1_mask"] is not None:
            d_h1 = d_h1 * cache["h1_mask"] / (1.0 - cache["rate"])
        g1 = gat_layer_backward(d_h1, cache["c1"])
        grads = {}
        for tag, g, layer in (("layer1", g1, self.layer1), ("layer2", g2, self.layer2)):
            for k in range(layer.heads):
                grads[f"{tag}.head{k}.weight"] = g["weights"][k]
                grads[f"{tag}.head{k}.kernel"] = g["kernels"][k]
        return grads

    def attention_records(self, cache) -> tuple:
        return cache["records"]


class GcnModel:
    """Two-layer GCN baseline over the normalized weighted adjacency."""

    def __init__(self, config: ModelConfig, params0: GcnLayerParams,
                 params1: GcnLayerParams):
        self.config = config
        self.params0 = params0
        self.params1 = params1

    @classmethod
    def init(cls, config: ModelConfig, rng) -> "GcnModel":
        w0 = glorot_uniform(rng, (config.input_dim, config.hidden_units))
        w1 = glorot_uniform(rng, (config.hidden_units, config.classes))
        return cls(config, GcnLayerParams(w0, "relu"), GcnLayerParams(w1, "softmax"))

    def parameters(self) -> dict:
        return {"layer0.weight": self.params0.weight,
                "layer1.weight": self.params1.weight}

    def l2_parameter_names(self, scope: str = "first_layer") -> list:
        if scope == "first_layer":
            return ["layer0.weight"]
        if scope == "all":
            return list(self.parameters())
        raise ValueError(f"unknown l2 scope: {scope!r}")

    def load_parameters(self, values: dict) -> None:
        own = self.parameters()
        if set(values) != set(own):
            raise ValueError("parameter names do not match this model")
        for name, arr in values.items():
            if own[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            own[name][...] = arr

    def forward(self, features, a_hat: SparseMatrix, *, training: bool = False,
                rng=None, edge_weights=None):
        del edge_weights  # weights already live inside a_hat
        probs, cache = gcn_forward(
            features, a_hat, self.params0, self.params1,
            training=training, dropout_rate=self.config.dropout, rng=rng)
        return probs, cache

    def backward(self, d_probs: np.ndarray, cache) -> dict:
        g = gcn_backward(d_probs, cache)
        return {"layer0.weight": g["weights"][0], "layer1.weight": g["weights"][1]}
