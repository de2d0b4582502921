"""Graph construction fixtures and structural-rule properties."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convgrader.corpus import (Conversation, DiscourseLink, Response,
                               SpoTriplet, SynthConfig, synth_generate)
from convgrader.errors import ValidationError
from convgrader.graphs import (Edge, GraphBundle, HeteroGraph, Node, NodeKind,
                               build_action_graph, build_bundle,
                               build_discourse_graph, build_semantic_graph,
                               dump_bundle, dump_graph, is_content_token,
                               levi_transform, validate_bundle, validate_graph)


def _two_turn_conv():
    return Conversation("g1", 5, [
        Response(speaker="I", text="do you like dogs ?",
                 spo=[], out_links=[DiscourseLink(0, 1, "QAP")]),
        Response(speaker="C", text="yes i like dogs and um cats",
                 spo=[SpoTriplet((1, 2), (2, 3), (3, 4))], out_links=[]),
    ])


def test_content_token_filter():
    assert is_content_token("dogs")
    assert not is_content_token("the")      # stopword
    assert not is_content_token("um")       # filled pause
    assert not is_content_token("?")        # punctuation
    assert is_content_token("3pm")


def test_word_graph_structure():
    g = build_semantic_graph(_two_turn_conv())
    # responses 0..1, then distinct content words in first-seen order:
    # like, dogs, cats (yes/i/and are stopwords, um is a pause), then Global.
    words = g.nodes_of_kind(NodeKind.WORD)
    assert [w.payload for w in words] == ["like", "dogs", "cats"]
    assert g.n_nodes == 2 + 3 + 1
    assert g.global_id == 5
    # "like" and "dogs" appear in both responses, "cats" only in the second.
    pairs = {(e.src, e.dst) for e in g.edges if e.kind == "word_response"}
    like, dogs, cats = (w.node_id for w in words)
    assert pairs == {(like, 0), (like, 1), (dogs, 0), (dogs, 1), (cats, 1)}
    # each containment edge is mirrored
    mirrored = {(e.dst, e.src) for e in g.edges if e.kind == "response_word"}
    assert mirrored == pairs
    validate_graph(g)


def test_word_graph_collapses_repeats():
    conv = Conversation("g2", 5, [
        Response(speaker="C", text="dogs dogs dogs", spo=[], out_links=[])])
    g = build_semantic_graph(conv)
    assert len(g.nodes_of_kind(NodeKind.WORD)) == 1
    assert sum(1 for e in g.edges if e.kind == "word_response") == 1


def test_action_graph_structure():
    g = build_action_graph(_two_turn_conv())
    # 2 responses + 3 SPO + 1 intent + Global
    assert g.n_nodes == 7
    spo = [n for n in g.nodes if n.kind in (NodeKind.SUBJECT, NodeKind.PREDICATE,
                                            NodeKind.OBJECT)]
    assert [n.kind for n in spo] == [NodeKind.SUBJECT, NodeKind.PREDICATE,
                                     NodeKind.OBJECT]
    # payload carries (response idx, span, surface text)
    assert [n.payload[2] for n in spo] == ["i", "like", "dogs"]
    intent = g.nodes_of_kind(NodeKind.INTENT)[0]
    assert g.in_degree(intent.node_id, "spo_intent") == 3
    assert [e.dst for e in g.edges if e.kind == "intent_response"] == [1]
    validate_graph(g)


def test_action_graph_without_triplets():
    conv = Conversation("g3", 5, [
        Response(speaker="C", text="hello there", spo=[], out_links=[])])
    g = build_action_graph(conv)
    assert g.n_nodes == 2        # response + Global only
    validate_graph(g)


def test_levi_transform_keeps_duplicates():
    links = [DiscourseLink(0, 1, "QAP"), DiscourseLink(0, 1, "QAP")]
    nodes, edges = levi_transform(links, [10, 11], first_node_id=20)
    assert [n.node_id for n in nodes] == [20, 21]
    assert all(n.kind == NodeKind.DISCOURSE and n.payload == "QAP"
               for n in nodes)
    assert [(e.src, e.dst) for e in edges] == [(10, 20), (20, 11),
                                               (10, 21), (21, 11)]


def test_discourse_graph_node_count_formula():
    conv = _two_turn_conv()
    g = build_discourse_graph(conv)
    assert g.n_nodes == len(conv.responses) + 1 + 1
    validate_graph(g)
    # two identical links stay two distinct relation nodes
    conv.responses[0].out_links.append(DiscourseLink(0, 1, "QAP"))
    g2 = build_discourse_graph(conv)
    assert g2.n_nodes == len(conv.responses) + 2 + 1
    assert len(g2.nodes_of_kind(NodeKind.DISCOURSE)) == 2
    validate_graph(g2)


def test_global_node_rules():
    for g in build_bundle(_two_turn_conv()).graphs():
        gid = g.global_id
        assert g.nodes[gid].kind == NodeKind.GLOBAL
        assert g.out_degree(gid) == 0
        assert g.in_degree(gid, "to_global") == g.n_nodes - 1
        sources = {e.src for e in g.edges if e.dst == gid}
        assert sources == set(range(g.n_nodes)) - {gid}


def test_bundle_subset_selection():
    b = build_bundle(_two_turn_conv(), use_actions=False)
    assert b.action is None
    assert [g.name for g in b.graphs()] == ["word", "discourse"]
    validate_bundle(b)


def _synth_conv(seed):
    cfg = SynthConfig(n_conversations=1, responses_per_conv=(2, 10),
                      tokens_per_response=(1, 14), rng_seed=seed)
    return synth_generate(cfg)[0]


@settings(deadline=None, max_examples=60)
@given(st.integers(0, 2 ** 16))
def test_structural_invariants_on_random_conversations(seed):
    conv = _synth_conv(seed)
    bundle = build_bundle(conv)
    validate_bundle(bundle)
    R = len(conv.responses)
    L = len(conv.all_links())

    # word graph: responses + distinct content types + Global
    types = set()
    pairs = 0
    for resp in conv.responses:
        in_resp = {t for t in resp.tokens if is_content_token(t)}
        types |= in_resp
        pairs += len(in_resp)
    assert bundle.word.n_nodes == R + len(types) + 1
    assert len(bundle.word.edges) == 2 * pairs + bundle.word.n_nodes - 1

    # action graph: responses + 4 nodes per triplet + Global
    n_trip = sum(len(resp.spo or ()) for resp in conv.responses)
    assert bundle.action.n_nodes == R + 4 * n_trip + 1
    assert len(bundle.action.edges) == 4 * n_trip + bundle.action.n_nodes - 1

    # discourse graph: responses + links + Global, duplicates included
    assert bundle.discourse.n_nodes == R + L + 1
    assert len(bundle.discourse.edges) == 2 * L + bundle.discourse.n_nodes - 1


def _mutate(g, **kw):
    return HeteroGraph(kw.get("name", g.name), list(g.nodes), list(g.edges),
                       g.global_id)


@pytest.mark.parametrize("breaker,message", [
    (lambda g: g.edges.append(Edge(g.global_id, 0, "to_global")),
     "Global node emits"),
    (lambda g: g.edges.append(Edge(0, 0, "word_response")), "self-loop"),
    (lambda g: g.edges.append(Edge(0, g.global_id, "word_response")),
     "wrong kind"),
    (lambda g: g.edges.append(g.edges[0]), "duplicate edge"),
    (lambda g: g.edges.remove(Edge(0, g.global_id, "to_global")),
     "lack a"),
])
def test_validate_rejects_broken_globals(breaker, message):
    g = _mutate(build_semantic_graph(_two_turn_conv()))
    breaker(g)
    with pytest.raises(ValidationError, match=message):
        validate_graph(g)


def test_validate_rejects_word_word_edge():
    g = _mutate(build_semantic_graph(_two_turn_conv()))
    words = g.nodes_of_kind(NodeKind.WORD)
    g.edges.append(Edge(words[0].node_id, words[1].node_id, "word_response"))
    with pytest.raises(ValidationError, match="bipartite"):
        validate_graph(g)


def test_validate_rejects_unpaired_containment():
    g = _mutate(build_semantic_graph(_two_turn_conv()))
    cats = next(n for n in g.nodes_of_kind(NodeKind.WORD)
                if n.payload == "cats")
    g.edges.append(Edge(0, cats.node_id, "response_word"))
    with pytest.raises(ValidationError, match="paired"):
        validate_graph(g)


def test_validate_rejects_spo_with_two_intents():
    g = _mutate(build_action_graph(_two_turn_conv()))
    spo0 = g.nodes_of_kind(NodeKind.SUBJECT)[0]
    intent = g.nodes_of_kind(NodeKind.INTENT)[0]
    g.edges.append(Edge(spo0.node_id, intent.node_id, "spo_intent_x"))
    with pytest.raises(ValidationError, match="exactly one intent"):
        validate_graph(g)


def test_validate_rejects_discourse_double_source():
    conv = _two_turn_conv()
    g = _mutate(build_discourse_graph(conv))
    d = g.nodes_of_kind(NodeKind.DISCOURSE)[0]
    g.edges.append(Edge(1, d.node_id, "response_discourse"))
    with pytest.raises(ValidationError, match="in-degree must be 1"):
        validate_graph(g)


def test_validate_rejects_sparse_node_ids():
    g = _mutate(build_semantic_graph(_two_turn_conv()))
    g.nodes[1] = Node(7, NodeKind.RESPONSE, 1)
    with pytest.raises(ValidationError, match="dense"):
        validate_graph(g)


def test_validate_bundle_checks_response_prefix():
    b = build_bundle(_two_turn_conv())
    b.n_responses = 3
    with pytest.raises(ValidationError, match="response nodes"):
        validate_bundle(b)


def test_dump_round_readable():
    text = dump_bundle(build_bundle(_two_turn_conv()))
    assert text.startswith("conversation g1 responses=2")
    assert "graph word nodes=6" in text
    assert "edge 0 -> 5 [to_global]" in text
    assert text.endswith("\n")


def test_dump_graph_sorts_edges():
    g = build_semantic_graph(_two_turn_conv())
    lines = [ln for ln in dump_graph(g).splitlines() if ln.startswith("  edge")]
    assert lines == sorted(lines, key=lambda ln: ln)
