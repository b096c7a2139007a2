"""The SAGE-FIN network: a BEAN graph autoencoder with two supervised heads.

The encoder maps node and edge features to latent states. Three decoders sit on
top: a feature decoder (more BEAN layers) that reconstructs the inputs, an MLP
scoring whether a (U, V) pair is an edge, and one MLP per partition producing a
fraud logit. Training minimises the weighted sum of the three losses.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .conv import AGGREGATORS, BeanConv, LayerState
from .exceptions import DimensionMismatch, ExhaustedSpace, InvalidConfig
from .graph import PARTITIONS, U, V, check_partition
from .nn import MLP, bce_with_logits, mse

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
# keeps MLP pre-activations off the ReLU kink when a latent row is all zeros
HEAD_BIAS_INIT = 0.01


@dataclass
class SageFinConfig:
    n_layers: int = 4
    hidden_dim: int = 32
    latent_dim: int = 32
    mlp_depth: int = 4
    negative_ratio: int = 5
    lambda_feat: float = 1.0
    lambda_struct: float = 1.0
    lambda_class: float = 1.0
    aggregator: str = "mean"
    reconstruct_edges: bool = True
    seed: int = 0

    def validate(self):
        if self.n_layers < 2 or self.n_layers % 2:
            raise InvalidConfig(f"n_layers must be even and >= 2, got {self.n_layers}")
        if self.hidden_dim <= 0 or self.latent_dim <= 0:
            raise InvalidConfig("hidden_dim and latent_dim must be positive")
        if self.mlp_depth < 1:
            raise InvalidConfig("mlp_depth must be >= 1")
        if self.negative_ratio < 1:
            raise InvalidConfig("negative_ratio must be >= 1")
        if min(self.lambda_feat, self.lambda_struct, self.lambda_class) < 0:
            raise InvalidConfig("loss weights must be non-negative")
        if self.aggregator not in AGGREGATORS:
            raise InvalidConfig(f"aggregator must be one of {AGGREGATORS}")
        return self

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    feat_u: float
    feat_v: float
    feat_e: float
    edge: float
    class_u: float
    class_v: float
    lambda_feat: float
    lambda_struct: float
    lambda_class: float

    @property
    def feature(self):
        return self.feat_u + self.feat_v + self.feat_e

    @property
    def classification(self):
        return self.class_u + self.class_v

    @property
    def total(self):
        return (self.lambda_feat * self.feature + self.lambda_struct * self.edge
                + self.lambda_class * self.classification)

    def as_dict(self):
        return {"feat_u": self.feat_u, "feat_v": self.feat_v, "feat_e": self.feat_e,
                "edge": self.edge, "class_u": self.class_u, "class_v": self.class_v,
                "total": self.total}


def _mlp_dims(in_dim, hidden, depth):
    return [in_dim] + [hidden] * (depth - 1) + [1]


class SageFinNetwork:
    """All learned parameters plus forward and backward passes.

    Parameters
    ----------
    dims : tuple of int
        Input feature widths ``(d_u, d_v, d_e)``.
    config : SageFinConfig
    """

    def __init__(self, dims, config=None):
        self.config = (config or SageFinConfig()).validate()
        self.dims = tuple(int(d) for d in dims)
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        half = cfg.n_layers // 2
        hid = (cfg.hidden_dim,) * 3
        lat = (cfg.latent_dim,) * 3
        enc = [self.dims] + [hid] * (half - 1) + [lat]
        dec = [lat] + [hid] * (half - 1) + [self.dims]
        self.encoder = [BeanConv(a, b, cfg.aggregator, rng=rng) for a, b in zip(enc[:-1], enc[1:])]
        self.decoder = [BeanConv(a, b, cfg.aggregator, final=(i == half - 1), rng=rng)
                        for i, (a, b) in enumerate(zip(dec[:-1], dec[1:]))]
        self.edge_mlp = MLP(_mlp_dims(2 * cfg.latent_dim, cfg.hidden_dim, cfg.mlp_depth), rng,
                            HEAD_BIAS_INIT)
        self.classifier = {p: MLP(_mlp_dims(cfg.latent_dim, cfg.hidden_dim, cfg.mlp_depth), rng,
                                  HEAD_BIAS_INIT)
                           for p in PARTITIONS}
        assert self.decoder[-1].out_dims == self.dims
        assert self.encoder[-1].out_dims == lat

    # -- parameter bookkeeping ----------------------------------------------

    def _modules(self):
        for i, layer in enumerate(self.encoder):
            yield f"encoder.{i}", layer
        for i, layer in enumerate(self.decoder):
            yield f"decoder.{i}", layer
        yield "edge_mlp", self.edge_mlp
        for p in PARTITIONS:
            yield f"classifier_{p}", self.classifier[p]

    def named_parameters(self):
        return [(f"{m}.{n}", p, g) for m, mod in self._modules() for n, p, g in mod.parameters()]

    def named_buffers(self):
        out = []
        for m, mod in self._modules():
            if hasattr(mod, "buffers"):
                out += [(f"{m}.{n}", b) for n, b in mod.buffers()]
        return out

    def parameters(self):
        return [p for _, p, _ in self.named_parameters()]

    def gradients(self):
        return [g for _, _, g in self.named_parameters()]

    def zero_grad(self):
        for g in self.gradients():
            g[...] = 0.0

    def state_dict(self):
        state = {name: p.copy() for name, p, _ in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        targets = {name: p for name, p, _ in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:3]}")
        for name, arr in targets.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise DimensionMismatch(f"{name}: {src.shape} vs {arr.shape}")
            arr[...] = src

    # -- forward pieces --------------------------------------------------------

    def _check_graph(self, graph):
        if (graph.d_u, graph.d_v, graph.d_e) != self.dims:
            raise DimensionMismatch(
                f"graph feature widths {(graph.d_u, graph.d_v, graph.d_e)} do not match "
                f"model {self.dims}"
            )

    def encode(self, graph, training=False, update_stats=True):
        self._check_graph(graph)
        state = LayerState.from_graph(graph)
        caches = []
        for layer in self.encoder:
            state, c = layer.forward(graph, state, training, update_stats)
            caches.append(c)
        return state, caches

    def decode_features(self, graph, latent, training=False, update_stats=True):
        state, caches = latent, []
        for layer in self.decoder:
            state, c = layer.forward(graph, state, training, update_stats)
            caches.append(c)
        return state, caches

    def edge_logits(self, latent, pairs):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        x = np.concatenate([latent.h_u[pairs[:, 0]], latent.h_v[pairs[:, 1]]], axis=1)
        out, cache = self.edge_mlp.forward(x)
        return out[:, 0], cache

    def predict_edge(self, z_u, z_v):
        """Logit that the pair with latent rows ``z_u``, ``z_v`` is an edge."""
        z_u = np.asarray(z_u, dtype=np.float64).reshape(-1)
        z_v = np.asarray(z_v, dtype=np.float64).reshape(-1)
        if len(z_u) + len(z_v) != self.edge_mlp.in_dim:
            raise DimensionMismatch("latent rows do not match the structure decoder width")
        out, _ = self.edge_mlp.forward(np.concatenate([z_u, z_v])[None, :])
        return float(out[0, 0])

    def node_logits(self, latent, partition, nodes=None):
        h = latent.get(check_partition(partition))
        if nodes is not None:
            h = h[np.asarray(nodes, dtype=np.int64)]
        out, cache = self.classifier[partition].forward(h)
        return out[:, 0], cache

    def predict_node(self, z, partition):
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
        if z.shape[1] != self.config.latent_dim:
            raise DimensionMismatch("latent row does not match the classifier width")
        out, _ = self.classifier[check_partition(partition)].forward(z)
        return float(out[0, 0])

    def target_logit(self, graph, partition, node):
        """Fraud logit of one node, computed in inference mode on its receptive field.

        Only nodes within ``len(encoder)`` hops and the edges among them can
        influence the encoder output of ``node`` when batch norm uses running
        statistics, so the encoder runs on that induced subgraph alone.
        """
        hood = graph.n_hop_neighborhood(partition, node, len(self.encoder))
        sub = graph.induced_subgraph(hood.u_nodes, hood.v_nodes)
        local = int(np.searchsorted(hood.nodes(partition), node))
        latent, _ = self.encode(sub, training=False)
        logits, _ = self.node_logits(latent, partition, [local])
        return float(logits[0])

    # -- loss ------------------------------------------------------------------

    def loss(self, graph, masks, positives, negatives, training=True, compute_grad=True,
             update_stats=True):
        """Composite loss on ``graph``; accumulates gradients when ``compute_grad``.

        ``masks`` maps each partition to a boolean array selecting nodes whose
        label contributes to the classification term. Nodes with an unknown label
        are dropped from it whatever the mask says.
        """
        cfg = self.config
        latent, enc_caches = self.encode(graph, training, update_stats)
        recon, dec_caches = self.decode_features(graph, latent, training, update_stats)

        f_u, g_ru = mse(recon.h_u, graph.u_features)
        f_v, g_rv = mse(recon.h_v, graph.v_features)
        if cfg.reconstruct_edges:
            f_e, g_re = mse(recon.h_e, graph.e_features)
        else:
            f_e, g_re = 0.0, np.zeros_like(recon.h_e)

        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
        negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
        pairs = np.concatenate([positives, negatives])
        targets = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
        if len(pairs):
            e_logits, e_cache = self.edge_logits(latent, pairs)
            l_edge, g_edge = bce_with_logits(e_logits, targets)
        else:
            l_edge, e_cache, g_edge = 0.0, None, None

        class_terms, class_caches = {}, {}
        for p in PARTITIONS:
            labels = graph.labels(p)
            mask = np.asarray(masks.get(p, np.zeros(len(labels), bool)), dtype=bool)
            if mask.shape != labels.shape:
                raise DimensionMismatch(f"mask for {p} has shape {mask.shape}")
            idx = np.flatnonzero(mask & (labels >= 0))
            if idx.size == 0:
                logger.debug("empty classification mask for partition %s", p)
                class_terms[p] = 0.0
                continue
            logits, cache = self.node_logits(latent, p, idx)
            class_terms[p], g = bce_with_logits(logits, labels[idx].astype(np.float64))
            class_caches[p] = (idx, cache, g)

        breakdown = LossBreakdown(f_u, f_v, f_e, l_edge, class_terms[U], class_terms[V],
                                  cfg.lambda_feat, cfg.lambda_struct, cfg.lambda_class)
        if not compute_grad:
            return breakdown

        d_lat = LayerState.zeros_like(latent)
        for p, (idx, cache, g) in class_caches.items():
            dz = self.classifier[p].backward(cache, cfg.lambda_class * g[:, None])
            np.add.at(d_lat.h_u if p == U else d_lat.h_v, idx, dz)
        if e_cache is not None:
            dx = self.edge_mlp.backward(e_cache, cfg.lambda_struct * g_edge[:, None])
            d = cfg.latent_dim
            np.add.at(d_lat.h_u, pairs[:, 0], dx[:, :d])
            np.add.at(d_lat.h_v, pairs[:, 1], dx[:, d:])
        lf = cfg.lambda_feat
        grads = LayerState(lf * g_ru, lf * g_rv, lf * g_re)
        for layer, c in zip(reversed(self.decoder), reversed(dec_caches)):
            grads = layer.backward(c, grads)
        grads = LayerState(grads.h_u + d_lat.h_u, grads.h_v + d_lat.h_v, grads.h_e + d_lat.h_e)
        for layer, c in zip(reversed(self.encoder), reversed(enc_caches)):
            grads = layer.backward(c, grads)
        return breakdown

    # -- checkpoints -----------------------------------------------------------

    def save(self, path, optimizer=None, extra=None):
        arrays = {f"param/{k}": v for k, v in self.state_dict().items()}
        meta = {"version": CHECKPOINT_VERSION, "dims": list(self.dims),
                "config": asdict(self.config), "extra": extra or {}}
        if optimizer is not None:
            opt = optimizer.state_dict()
            for i, (m, v) in enumerate(zip(opt.pop("m", []), opt.pop("v", []))):
                arrays[f"adam_m/{i}"] = m
                arrays[f"adam_v/{i}"] = v
            meta["optimizer"] = opt
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        """Returns ``(network, optimizer_state or None, extra)``."""
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            net = cls(meta["dims"], SageFinConfig.from_dict(meta["config"]))
            net.load_state_dict({k[len("param/"):]: data[k] for k in data.files
                                 if k.startswith("param/")})
            opt = meta.get("optimizer")
            if opt is not None:
                n = sum(1 for k in data.files if k.startswith("adam_m/"))
                if n:
                    opt["m"] = [data[f"adam_m/{i}"] for i in range(n)]
                    opt["v"] = [data[f"adam_v/{i}"] for i in range(n)]
        return net, opt, meta.get("extra", {})


def sample_negative_edges(graph, ratio, rng, n_positive=None):
    """``ratio * n_positive`` distinct (u, v) pairs that are not edges of ``graph``.

    ``n_positive`` defaults to the number of edges. Pairs are drawn uniformly
    without replacement from the complement of the edge set.
    """
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    n_positive = graph.n_edges if n_positive is None else int(n_positive)
    want = int(ratio * n_positive)
    total = graph.n_u * graph.n_v
    taken = np.unique(graph.edge_pair_codes())
    free = total - len(taken)
    if want > free:
        raise ExhaustedSpace(f"requested {want} non-edges but only {free} exist")
    if want == 0:
        return np.empty((0, 2), dtype=np.int64)
    if want * 3 > free:
        pool = np.setdiff1d(np.arange(total, dtype=np.int64), taken, assume_unique=True)
        codes = rng.choice(pool, size=want, replace=False)
    else:
        codes = np.empty(0, dtype=np.int64)
        while len(codes) < want:
            draw = rng.integers(0, total, size=2 * (want - len(codes)) + 16)
            draw = draw[~np.isin(draw, taken)]
            _, first = np.unique(draw, return_index=True)
            draw = draw[np.sort(first)]
            draw = draw[~np.isin(draw, codes)]
            codes = np.concatenate([codes, draw[:want - len(codes)]])
    return np.stack([codes // graph.n_v, codes % graph.n_v], axis=1)
