"""Heterogeneous conversation graphs and their structural rules.

Three graphs per conversation share the response nodes:

* word graph: bipartite content-word <-> response containment, both ways;
* action graph: subject/predicate/object nodes feed an intent node per
  triplet, each intent feeds its response;
* discourse graph: each discourse link becomes its own relation node
  (source response -> relation node -> target response), so duplicate
  links stay distinct nodes.

Every graph has exactly one Global node that receives an edge from every
other node and emits none; graph readouts take its final state. Node ids
are dense 0..N-1 with responses first and Global last.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .corpus import (Conversation, DiscourseLink, FILLED_PAUSES, STOPWORDS)
from .errors import ValidationError


class NodeKind(enum.Enum):
    WORD = "word"
    RESPONSE = "response"
    GLOBAL = "global"
    SUBJECT = "subject"
    PREDICATE = "predicate"
    OBJECT = "object"
    INTENT = "intent"
    DISCOURSE = "discourse"


@dataclass(frozen=True)
class Node:
    node_id: int
    kind: NodeKind
    payload: object = None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str


@dataclass
class HeteroGraph:
    name: str
    nodes: list[Node] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    global_id: int = -1

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def nodes_of_kind(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        src = np.asarray([e.src for e in self.edges], dtype=np.int64)
        dst = np.asarray([e.dst for e in self.edges], dtype=np.int64)
        return src, dst

    def in_degree(self, node_id: int, kind: str | None = None) -> int:
        return sum(1 for e in self.edges
                   if e.dst == node_id and (kind is None or e.kind == kind))

    def out_degree(self, node_id: int, kind: str | None = None) -> int:
        return sum(1 for e in self.edges
                   if e.src == node_id and (kind is None or e.kind == kind))


def _finish(graph: HeteroGraph) -> HeteroGraph:
    """Append the Global node and one edge from every other node."""
    gid = len(graph.nodes)
    graph.nodes.append(Node(gid, NodeKind.GLOBAL))
    graph.global_id = gid
    for node in graph.nodes[:-1]:
        graph.edges.append(Edge(node.node_id, gid, "to_global"))
    return graph


def is_content_token(token: str, stopwords=STOPWORDS, filled=FILLED_PAUSES) -> bool:
    return token.isalnum() and token not in stopwords and token not in filled


def build_semantic_graph(conv: Conversation, stopwords=STOPWORDS,
                         filled=FILLED_PAUSES) -> HeteroGraph:
    """Bipartite word <-> response graph over distinct content tokens."""
    g = HeteroGraph("word")
    for r_idx in range(len(conv.responses)):
        g.nodes.append(Node(r_idx, NodeKind.RESPONSE, r_idx))
    word_ids: dict[str, int] = {}
    seen_pairs: set[tuple[int, int]] = set()
    for r_idx, resp in enumerate(conv.responses):
        for tok in resp.tokens:
            if not is_content_token(tok, stopwords, filled):
                continue
            w_id = word_ids.get(tok)
            if w_id is None:
                w_id = len(g.nodes)
                word_ids[tok] = w_id
                g.nodes.append(Node(w_id, NodeKind.WORD, tok))
            if (w_id, r_idx) not in seen_pairs:
                seen_pairs.add((w_id, r_idx))
                g.edges.append(Edge(w_id, r_idx, "word_response"))
                g.edges.append(Edge(r_idx, w_id, "response_word"))
    return _finish(g)


_SPO_KINDS = (NodeKind.SUBJECT, NodeKind.PREDICATE, NodeKind.OBJECT)


def build_action_graph(conv: Conversation) -> HeteroGraph:
    """Subject/predicate/object -> intent -> response graph.

    Responses must already carry SPO annotations (ensure_annotations fills
    them). Node order: responses, then all S/P/O nodes triplet by triplet,
    then one intent per triplet, then Global.
    """
    g = HeteroGraph("action")
    n_resp = len(conv.responses)
    for r_idx in range(n_resp):
        g.nodes.append(Node(r_idx, NodeKind.RESPONSE, r_idx))
    triplets = []
    for r_idx, resp in enumerate(conv.responses):
        for trip in resp.spo or ():
            triplets.append((r_idx, trip))
    for j, (r_idx, trip) in enumerate(triplets):
        for k, (kind, span) in enumerate(zip(_SPO_KINDS, trip.spans())):
            text = " ".join(conv.responses[r_idx].tokens[span[0]:span[1]])
            g.nodes.append(Node(n_resp + 3 * j + k, kind, (r_idx, span, text)))
    first_intent = n_resp + 3 * len(triplets)
    for j, (r_idx, _) in enumerate(triplets):
        intent_id = first_intent + j
        g.nodes.append(Node(intent_id, NodeKind.INTENT, (r_idx, j)))
        for k in range(3):
            g.edges.append(Edge(n_resp + 3 * j + k, intent_id, "spo_intent"))
        g.edges.append(Edge(intent_id, r_idx, "intent_response"))
    return _finish(g)


def levi_transform(links: list[DiscourseLink], response_ids: list[int],
                   first_node_id: int) -> tuple[list[Node], list[Edge]]:
    """Turn each labelled link into its own node with in/out edges.

    Returns one Discourse node per link (duplicates included) plus the
    source->node and node->target edges.
    """
    nodes, edges = [], []
    for k, lk in enumerate(links):
        d_id = first_node_id + k
        nodes.append(Node(d_id, NodeKind.DISCOURSE, lk.relation))
        edges.append(Edge(response_ids[lk.source], d_id, "response_discourse"))
        edges.append(Edge(d_id, response_ids[lk.target], "discourse_response"))
    return nodes, edges


def build_discourse_graph(conv: Conversation) -> HeteroGraph:
    g = HeteroGraph("discourse")
    n_resp = len(conv.responses)
    for r_idx in range(n_resp):
        g.nodes.append(Node(r_idx, NodeKind.RESPONSE, r_idx))
    nodes, edges = levi_transform(conv.all_links(), list(range(n_resp)), n_resp)
    g.nodes.extend(nodes)
    g.edges.extend(edges)
    return _finish(g)


@dataclass
class GraphBundle:
    conv_id: str
    n_responses: int
    word: HeteroGraph | None
    action: HeteroGraph | None
    discourse: HeteroGraph | None

    def graphs(self) -> list[HeteroGraph]:
        return [g for g in (self.word, self.action, self.discourse) if g is not None]


def build_bundle(conv: Conversation, use_words=True, use_actions=True,
                 use_discourse=True, stopwords=STOPWORDS,
                 filled=FILLED_PAUSES) -> GraphBundle:
    return GraphBundle(
        conv_id=conv.conv_id,
        n_responses=len(conv.responses),
        word=build_semantic_graph(conv, stopwords, filled) if use_words else None,
        action=build_action_graph(conv) if use_actions else None,
        discourse=build_discourse_graph(conv) if use_discourse else None,
    )


def validate_graph(graph: HeteroGraph) -> None:
    """Raise ValidationError on any structural rule violation."""
    n = graph.n_nodes
    for i, node in enumerate(graph.nodes):
        if node.node_id != i:
            raise ValidationError(f"{graph.name}: node ids must be dense, "
                                  f"got {node.node_id} at index {i}")
    globals_ = graph.nodes_of_kind(NodeKind.GLOBAL)
    if len(globals_) != 1 or globals_[0].node_id != graph.global_id:
        raise ValidationError(f"{graph.name}: exactly one Global node required")
    gid = graph.global_id
    seen = set()
    to_global = set()
    for e in graph.edges:
        if not (0 <= e.src < n and 0 <= e.dst < n):
            raise ValidationError(f"{graph.name}: edge endpoint out of range")
        if e.src == e.dst:
            raise ValidationError(f"{graph.name}: self-loop at node {e.src}")
        key = (e.src, e.dst, e.kind)
        if key in seen:
            raise ValidationError(f"{graph.name}: duplicate edge {key}")
        seen.add(key)
        if e.src == gid:
            raise ValidationError(f"{graph.name}: Global node emits an edge")
        if e.dst == gid:
            if e.kind != "to_global":
                raise ValidationError(f"{graph.name}: wrong kind on Global edge")
            to_global.add(e.src)
    missing = set(range(n)) - {gid} - to_global
    if missing:
        raise ValidationError(f"{graph.name}: nodes {sorted(missing)} lack a "
                              f"Global edge")

    kinds = {node.node_id: node.kind for node in graph.nodes}
    plain = [e for e in graph.edges if e.kind != "to_global"]
    if graph.name == "word":
        pair_kinds = {"word_response": (NodeKind.WORD, NodeKind.RESPONSE),
                      "response_word": (NodeKind.RESPONSE, NodeKind.WORD)}
        forward = set()
        backward = set()
        for e in plain:
            want = pair_kinds.get(e.kind)
            if want is None or (kinds[e.src], kinds[e.dst]) != want:
                raise ValidationError(f"{graph.name}: edge {e} breaks bipartite rule")
            (forward if e.kind == "word_response" else backward).add((e.src, e.dst))
        if forward != {(b, a) for a, b in backward}:
            raise ValidationError(f"{graph.name}: containment edges must be paired")
    elif graph.name == "action":
        for node in graph.nodes:
            if node.kind in _SPO_KINDS:
                outs = [e for e in plain if e.src == node.node_id]
                if len(outs) != 1 or outs[0].kind != "spo_intent" \
                        or kinds[outs[0].dst] != NodeKind.INTENT:
                    raise ValidationError(
                        f"{graph.name}: SPO node {node.node_id} must feed exactly "
                        f"one intent")
            elif node.kind == NodeKind.INTENT:
                outs = [e for e in plain if e.src == node.node_id]
                if len(outs) != 1 or outs[0].kind != "intent_response" \
                        or kinds[outs[0].dst] != NodeKind.RESPONSE:
                    raise ValidationError(
                        f"{graph.name}: intent {node.node_id} must reach exactly "
                        f"one response")
                ins = [e for e in plain if e.dst == node.node_id]
                if len(ins) != 3 or any(e.kind != "spo_intent" for e in ins):
                    raise ValidationError(
                        f"{graph.name}: intent {node.node_id} needs its 3 SPO edges")
    elif graph.name == "discourse":
        for node in graph.nodes:
            if node.kind != NodeKind.DISCOURSE:
                continue
            ins = [e for e in plain if e.dst == node.node_id]
            outs = [e for e in graph.edges if e.src == node.node_id]
            if len(ins) != 1 or ins[0].kind != "response_discourse":
                raise ValidationError(
                    f"{graph.name}: discourse node {node.node_id} in-degree must be 1")
            if len(outs) != 2 or {e.kind for e in outs} != \
                    {"discourse_response", "to_global"}:
                raise ValidationError(
                    f"{graph.name}: discourse node {node.node_id} out-degree must "
                    f"be response + Global")


def validate_bundle(bundle: GraphBundle) -> None:
    for g in bundle.graphs():
        validate_graph(g)
        resp_nodes = g.nodes_of_kind(NodeKind.RESPONSE)
        if len(resp_nodes) != bundle.n_responses or \
                [n.node_id for n in resp_nodes] != list(range(bundle.n_responses)):
            raise ValidationError(f"{g.name}: response nodes must be 0..R-1")


def dump_graph(graph: HeteroGraph) -> str:
    lines = [f"graph {graph.name} nodes={graph.n_nodes} edges={len(graph.edges)}"]
    for node in graph.nodes:
        payload = "" if node.payload is None else f" {node.payload!r}"
        lines.append(f"  node {node.node_id} {node.kind.value}{payload}")
    for e in sorted(graph.edges, key=lambda e: (e.src, e.dst, e.kind)):
        lines.append(f"  edge {e.src} -> {e.dst} [{e.kind}]")
    return "\n".join(lines)


def dump_bundle(bundle: GraphBundle) -> str:
    parts = [f"conversation {bundle.conv_id} responses={bundle.n_responses}"]
    parts.extend(dump_graph(g) for g in bundle.graphs())
    return "\n".join(parts) + "\n"
