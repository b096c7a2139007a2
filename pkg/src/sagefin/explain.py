"""Edge-ablation explanations of single node predictions.

Each edge near the target is removed on its own, and the resulting increase
in the target's classification loss is that edge's causal score. A connected
subgraph around the target is then grown greedily from the highest scores.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InsufficientLabels, InvalidConfig, UntrainedModel
from .graph import FRAUD, NON_FRAUD, PARTITIONS, U, V, check_partition
from .nn import bce_with_logits, sigmoid

logger = logging.getLogger(__name__)

REFERENCES = ("predicted", "label")
NO_POSITIVE_SCORES = "NoPositiveScores"


@dataclass
class ExplainConfig:
    """Neighbourhood radius, subgraph size and the label the loss is taken against.

    ``reference="predicted"`` explains the model's own decision; ``"label"``
    uses the ground-truth label and needs a labelled target.
    """

    n_hops: int = 4
    top_k: int = 10
    reference: str = "predicted"
    threads: int = 1

    def validate(self):
        if int(self.n_hops) < 1:
            raise InvalidConfig(f"n_hops must be >= 1, got {self.n_hops}")
        if int(self.top_k) < 1:
            raise InvalidConfig(f"top_k must be >= 1, got {self.top_k}")
        if self.reference not in REFERENCES:
            raise InvalidConfig(f"reference must be one of {REFERENCES}, got {self.reference!r}")
        if int(self.threads) < 1:
            raise InvalidConfig(f"threads must be >= 1, got {self.threads}")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known).validate()


@dataclass(frozen=True)
class EdgeScore:
    """Loss without edge ``edge_index`` (``L2``) minus the intact loss (``L1``)."""

    edge_index: int
    C: float
    L1: float
    L2: float

    @classmethod
    def from_losses(cls, edge_index, l1, l2):
        return cls(int(edge_index), float(l2 - l1), float(l1), float(l2))


@dataclass
class Explanation:
    """Selected subgraph for one target plus every score and the fidelity check.

    ``edges`` lists base edge ids in the order they were admitted, so the
    first ``k`` of them are the explanation of size ``k``. ``skipped`` holds
    ``[edge, step]`` pairs: a higher-scoring candidate passed over at that
    step because it did not yet touch the subgraph.
    """

    partition: str
    node: int
    n_hops: int
    top_k: int
    reference: str
    reference_label: int
    p_full: float
    p_subgraph: float
    edges: list = field(default_factory=list)
    u_nodes: list = field(default_factory=list)
    v_nodes: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    incomplete: bool = False
    diagnostic: str | None = None

    @property
    def gap(self):
        return abs(self.p_full - self.p_subgraph)

    def nodes(self, partition):
        return self.u_nodes if check_partition(partition) == U else self.v_nodes

    def score_of(self, edge_index):
        for s in self.scores:
            if s.edge_index == edge_index:
                return s
        raise KeyError(edge_index)

    def to_dict(self):
        d = asdict(self)
        d["scores"] = [asdict(s) for s in self.scores]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["scores"] = [EdgeScore(int(s["edge_index"]), float(s["C"]), float(s["L1"]),
                                 float(s["L2"])) for s in d.get("scores", [])]
        d["skipped"] = [list(map(int, pair)) for pair in d.get("skipped", [])]
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _network(model):
    """Accept a fitted detector or a bare network."""
    net = getattr(model, "network_", None)
    if net is not None:
        return net
    if hasattr(model, "target_logit"):
        return model
    raise UntrainedModel("the model is not fitted yet")


def _threshold(model):
    return float(getattr(model, "threshold", 0.5))


def _target_loss(logit, label):
    loss, _ = bce_with_logits(np.array([logit]), np.array([float(label)]))
    return loss


def reference_label(model, graph, partition, node, reference="predicted"):
    """The label the target's loss is measured against."""
    if reference == "label":
        label = int(graph.labels(partition)[node])
        if label not in (NON_FRAUD, FRAUD):
            raise InsufficientLabels(f"{partition} node {node} has no known label")
        return label
    logit = _network(model).target_logit(graph, partition, node)
    return int(sigmoid(logit) >= _threshold(model))


def baseline_loss(model, graph, partition, node, reference="predicted"):
    """BCE of the target's logit on the intact graph against its reference label."""
    net = _network(model)
    label = reference_label(model, graph, partition, node, reference)
    return _target_loss(net.target_logit(graph, partition, node), label)


def neighborhood_edges(graph, partition, node, n_hops):
    """Base ids of edges touching any node within ``n_hops`` of the target."""
    hood = graph.n_hop_neighborhood(partition, node, n_hops)
    ids = np.union1d(graph.incident_edges(U, hood.u_nodes), graph.incident_edges(V, hood.v_nodes))
    return ids.astype(np.int64)


def _map(fn, items, threads):
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, items))


def score_edges(model, graph, partition, node, n_hops=4, reference="predicted", threads=1):
    """Score every edge incident to the target's ``n_hops`` neighbourhood.

    Each edge is removed from the intact graph on its own. Only edges inside
    the classifier's receptive field can move the target's logit; the rest
    get ``C = 0`` without a forward pass. Results are ordered by edge id.
    """
    net = _network(model)
    check_partition(partition)
    node = graph._check_node(partition, node)
    label = reference_label(model, graph, partition, node, reference)
    l1 = _target_loss(net.target_logit(graph, partition, node), label)
    candidates = neighborhood_edges(graph, partition, node, n_hops)

    depth = len(net.encoder)
    field_hood = graph.n_hop_neighborhood(partition, node, depth)
    sub = graph.induced_subgraph(field_hood.u_nodes, field_hood.v_nodes)
    local_node = int(np.searchsorted(field_hood.nodes(partition), node))
    local_of = {int(e): k for k, e in enumerate(sub._cache["source_edge_ids"])}

    def ablate(edge):
        k = local_of.get(int(edge))
        if k is None:
            return EdgeScore(int(edge), 0.0, l1, l1)
        logit = net.target_logit(sub.without_edges([k]), partition, local_node)
        return EdgeScore.from_losses(edge, l1, _target_loss(logit, label))

    return _map(ablate, list(candidates), threads)


def select_subgraph(scores, graph, partition, node, top_k=10):
    """Grow a connected edge set from the target, best positive score first.

    At every step the highest-scoring remaining candidate that touches the
    current node set is admitted (ties go to the lower edge id). Candidates
    passed over are recorded and reconsidered at later steps.

    Returns ``(edges, u_nodes, v_nodes, skipped, incomplete, diagnostic)``.
    """
    check_partition(partition)
    positive = sorted((s for s in scores if s.C > 0), key=lambda s: (-s.C, s.edge_index))
    reached = {U: set(), V: set()}
    reached[partition].add(int(node))
    edges, skipped = [], []
    if not positive:
        return edges, sorted(reached[U]), sorted(reached[V]), skipped, True, NO_POSITIVE_SCORES
    edge_u, edge_v = graph._edge_u, graph._edge_v
    remaining = list(positive)
    while remaining and len(edges) < top_k:
        pick = None
        for i, s in enumerate(remaining):
            u, v = int(edge_u[s.edge_index]), int(edge_v[s.edge_index])
            if u in reached[U] or v in reached[V]:
                pick = i
                break
        if pick is None:
            break
        step = len(edges)
        skipped.extend([s.edge_index, step] for s in remaining[:pick])
        s = remaining.pop(pick)
        edges.append(s.edge_index)
        reached[U].add(int(edge_u[s.edge_index]))
        reached[V].add(int(edge_v[s.edge_index]))
    incomplete = len(edges) < top_k
    if incomplete:
        logger.warning("only %d connectable positive-score edges for %s node %d (K=%d)",
                       len(edges), partition, node, top_k)
    return edges, sorted(reached[U]), sorted(reached[V]), skipped, incomplete, None


def fidelity(model, graph, explanation):
    """Fraud probability with and without the non-selected neighbourhood edges.

    Returns ``(p_full, p_subgraph, gap)``. Edges beyond the explanation's
    neighbourhood are left in place.
    """
    net = _network(model)
    p, node = explanation.partition, explanation.node
    p_full = float(sigmoid(net.target_logit(graph, p, node)))
    hood = neighborhood_edges(graph, p, node, explanation.n_hops)
    drop = np.setdiff1d(hood, np.asarray(explanation.edges, dtype=np.int64))
    reduced = graph.without_edges(drop) if drop.size else graph
    p_sub = float(sigmoid(net.target_logit(reduced, p, node)))
    return p_full, p_sub, abs(p_full - p_sub)


def explain(model, graph, partition, node, config=None):
    """Score, select and check an explanation for one target node."""
    config = (config or ExplainConfig()).validate()
    node = graph._check_node(check_partition(partition), node)
    label = reference_label(model, graph, partition, node, config.reference)
    scores = score_edges(model, graph, partition, node, config.n_hops, config.reference,
                         config.threads)
    edges, u_nodes, v_nodes, skipped, incomplete, diag = select_subgraph(
        scores, graph, partition, node, config.top_k)
    exp = Explanation(partition, node, int(config.n_hops), int(config.top_k), config.reference,
                      label, 0.0, 0.0, edges, u_nodes, v_nodes, scores, skipped, incomplete, diag)
    exp.p_full, exp.p_subgraph, _ = fidelity(model, graph, exp)
    return exp


# -- export -------------------------------------------------------------------

LABEL_COLORS = {FRAUD: "#d62728", NON_FRAUD: "#2ca02c"}
UNKNOWN_COLOR = "#9e9e9e"
SHAPES = {U: "square", V: "circle"}


def explanation_filename(partition, node, top_k, ext):
    return f"{partition}_{node}_top{top_k}.{ext}"


def to_dot(explanation, graph):
    """Graphviz text: wallets as circles, transactions as squares, width by score."""
    exp = explanation
    lines = [f'graph "{exp.partition}_{exp.node}" {{', "  node [style=filled];"]
    for p in PARTITIONS:
        labels = graph.labels(p)
        for n in exp.nodes(p):
            color = LABEL_COLORS.get(int(labels[n]), UNKNOWN_COLOR)
            extra = ", peripheries=2" if (p, n) == (exp.partition, exp.node) else ""
            lines.append(f'  {p}{n} [label="{p}{n}", shape={SHAPES[p]}, fillcolor="{color}"{extra}];')
    if exp.edges:
        cs = {s.edge_index: s.C for s in exp.scores}
        top = max(cs[e] for e in exp.edges)
        for e in exp.edges:
            u, v = int(graph._edge_u[e]), int(graph._edge_v[e])
            width = 1.0 + 4.0 * cs[e] / top
            lines.append(f'  u{u} -- v{v} [penwidth={width:.3f}, label="{cs[e]:.3g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_explanation(explanation, graph, out_dir, formats=("dot", "json")):
    """Write the explanation files and return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for fmt in formats:
        name = explanation_filename(explanation.partition, explanation.node,
                                    explanation.top_k, fmt)
        path = os.path.join(out_dir, name)
        if fmt == "dot":
            text = to_dot(explanation, graph)
        elif fmt == "json":
            text = explanation.to_json()
        else:
            raise ValueError(f"unknown format {fmt!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        paths.append(path)
    return paths
