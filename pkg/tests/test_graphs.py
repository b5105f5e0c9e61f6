import json
from pathlib import Path

import numpy as np
import pytest

from modalmatch.graphs import (
    KnowledgeBase,
    ProjectionWeights,
    build_channel_visual_graph,
    build_linguistic_graph,
    build_spatial_visual_graph,
    derive_supervision_mask,
    load_knowledge_base,
    match_class_subgraphs,
    save_knowledge_base,
    select_class_representatives,
)
from modalmatch.losses import IGNORE, NEGATIVE, POSITIVE
from modalmatch.serialization import canonical_json, load_json

FIXTURE = Path(__file__).parent / "data" / "toy_kb.json"


@pytest.fixture
def kb() -> KnowledgeBase:
    return load_knowledge_base(FIXTURE)


class TestKnowledgeBaseIO:
    def test_minimal_file(self, tmp_path):
        doc = {
            "seen_classes": ["cat"],
            "unseen_classes": [],
            "parts": ["eye"],
            "states": ["soft"],
            "part_scores": [[1.0]],
            "state_scores": [[0.5]],
            "class_embeddings": [[1.0, 0.0]],
            "part_phrase_embeddings": {"eye|cat": [1.0, 0.5]},
            "state_phrase_embeddings": {"soft|cat": [1.0, 0.3]},
        }
        path = tmp_path / "kb.json"
        path.write_text(json.dumps(doc))
        kb = load_knowledge_base(path)
        assert kb.classes == ["cat"]
        assert kb.part_phrase_embeddings.shape == (1, 1, 2)

    def test_missing_phrase_embedding_names_the_pair(self, tmp_path):
        doc = load_json(FIXTURE)
        del doc["part_phrase_embeddings"]["wing|plane"]
        path = tmp_path / "kb.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="wing|plane"):
            load_knowledge_base(path)

    def test_malformed_json_reports_location(self, tmp_path):
        path = tmp_path / "kb.json"
        path.write_text("{\n  broken")
        with pytest.raises(ValueError, match="line"):
            load_knowledge_base(path)

    def test_fixture_round_trips_bit_identically(self, kb, tmp_path):
        out = tmp_path / "kb.json"
        save_knowledge_base(kb, out)
        assert out.read_bytes() == FIXTURE.read_bytes()
        # And a second hop through load/save is also stable.
        again = tmp_path / "kb2.json"
        save_knowledge_base(load_knowledge_base(out), again)
        assert again.read_bytes() == out.read_bytes()


class TestBuildLinguisticGraph:
    def test_m1_takes_the_top_scorer(self, kb):
        g = build_linguistic_graph(kb, M=1, kind="part")
        bird_nodes = g.nodes_of_class(0)
        assert len(bird_nodes) == 1
        assert kb.parts[g.modifier_idx[bird_nodes[0]]] == "wing"

    def test_inductive_node_count(self, kb):
        g = build_linguistic_graph(kb, M=2, mode="inductive", kind="part")
        assert g.n_nodes == 2 * kb.n_seen
        assert set(g.class_idx.tolist()) == set(range(kb.n_seen))

    def test_hand_enumerated_top2(self, kb):
        g = build_linguistic_graph(kb, M=2, kind="part")
        by_class = {}
        for m, c in g.node_tags():
            by_class.setdefault(kb.classes[c], []).append(kb.parts[m])
        assert by_class == {
            "bird": ["wing", "beak"],
            "cat": ["eye", "tail"],
            # eye/tail tie at 0.85 resolves lexicographically to eye.
            "person": ["finger", "eye"],
            "plane": ["wing", "wheel"],
        }

    def test_node_count_identity(self, kb):
        for M in (1, 2, 3):
            g = build_linguistic_graph(kb, M=M, kind="part")
            assert g.n_nodes == M * len(kb.classes)

    def test_inductive_is_transductive_minus_unseen(self, kb):
        full = build_linguistic_graph(kb, M=3, kind="part")
        ind = build_linguistic_graph(kb, M=3, mode="inductive", kind="part")
        kept = [t for t in full.node_tags() if t[1] < kb.n_seen]
        assert kept == ind.node_tags()

    def test_edges_share_class_or_modifier(self, kb):
        g = build_linguistic_graph(kb, M=2, kind="part")
        tags = g.node_tags()
        expected = {
            (i, j)
            for i in range(len(tags))
            for j in range(i + 1, len(tags))
            if tags[i][0] == tags[j][0] or tags[i][1] == tags[j][1]
        }
        assert set(g.edges) == expected

    def test_m_must_fit_vocabulary(self, kb):
        with pytest.raises(ValueError):
            build_linguistic_graph(kb, M=7, kind="part")

    def test_rebuild_is_deterministic(self, kb):
        a = build_linguistic_graph(kb, M=3, kind="state")
        b = build_linguistic_graph(kb, M=3, kind="state")
        assert np.array_equal(a.embeddings, b.embeddings)
        assert a.node_tags() == b.node_tags()
        assert a.edges == b.edges


class TestBuildSpatialVisualGraph:
    def test_single_unmatched_query(self):
        w = ProjectionWeights.initialize(4, 2, seed=0)
        matched = np.array([[1.0, 0.0, 0.0, 0.0]])
        unmatched = np.array([[0.9, 0.1, 0.0, 0.0]])
        g = build_spatial_visual_graph(matched, [0], unmatched, k=2, weights=w)
        assert g.n_nodes == 1
        assert g.class_idx.tolist() == [0]
        assert g.origins == [("spatial", 0)]

    def test_identity_projection_preserves_embeddings(self):
        w = ProjectionWeights(np.eye(4), np.ones((2, 4)))
        matched = np.array([[1.0, 0.0, 0.0, 0.0]])
        unmatched = np.array([[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
        g = build_spatial_visual_graph(matched, [0], unmatched, k=3, weights=w)
        selected = [g.origins[i][1] for i in range(g.n_nodes)]
        assert np.allclose(g.embeddings, unmatched[selected])

    def test_hand_enumerated_selection(self):
        # Two classes, six unmatched queries with hand-set similarities.
        d = 4
        w = ProjectionWeights(np.eye(d), np.ones((2, d)))
        matched = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        unmatched = np.array(
            [
                [0.9, 0.1, 0.0, 0.0],   # close to class 0
                [0.1, 0.9, 0.0, 0.0],   # close to class 1
                [0.8, 0.2, 0.0, 0.0],   # second closest to class 0
                [0.2, 0.8, 0.0, 0.0],   # second closest to class 1
                [0.0, 0.0, 1.0, 0.0],   # far from both
                [0.5, 0.5, 0.0, 0.0],   # equidistant
            ]
        )
        g = build_spatial_visual_graph(matched, [0, 1], unmatched, k=3, weights=w)
        per_class = {
            cls: sorted(g.origins[i][1] for i in g.nodes_of_class(cls))
            for cls in (0, 1)
        }
        # Brute-force cosine ranking gives queries {0, 2} for class 0 and
        # {1, 3} for class 1 as the top two each.
        assert per_class == {0: [0, 2], 1: [1, 3]}

    def test_empty_unmatched_set(self):
        w = ProjectionWeights.initialize(4, 2, seed=0)
        g = build_spatial_visual_graph(
            np.array([[1.0, 0, 0, 0]]), [0], np.zeros((0, 4)), k=3, weights=w
        )
        assert g.n_nodes == 0

    def test_at_most_k_minus_one_per_class(self):
        rng = np.random.default_rng(0)
        w = ProjectionWeights.initialize(6, 2, seed=0)
        matched = rng.normal(size=(2, 6))
        unmatched = rng.normal(size=(10, 6))
        g = build_spatial_visual_graph(matched, [0, 1], unmatched, k=4, weights=w)
        for cls in (0, 1):
            assert len(g.nodes_of_class(cls)) <= 3


class TestBuildChannelVisualGraph:
    def test_node_values_match_hand_multiplication(self):
        d, R = 4, 2
        proj = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0]])
        w = ProjectionWeights(np.eye(d), proj)
        rep = np.array([[1.0, 2.0, 3.0, 4.0]])
        g = build_channel_visual_graph(rep, [0], R, w)
        assert g.n_nodes == 2
        assert np.allclose(g.embeddings[0], np.array([1.0, 2.0]) @ proj)
        assert np.allclose(g.embeddings[1], np.array([3.0, 4.0]) @ proj)
        assert g.origins == [("channel", 0, 0), ("channel", 0, 1)]

    def test_count_identity(self):
        d, R = 8, 4
        w = ProjectionWeights.initialize(d, R, seed=1)
        reps = np.random.default_rng(2).normal(size=(3, d))
        g = build_channel_visual_graph(reps, [0, 1, 2], R, w)
        assert g.n_nodes == 3 * R
        for cls in (0, 1, 2):
            assert len(g.nodes_of_class(cls)) == R

    def test_r_must_divide_d(self):
        w = ProjectionWeights.initialize(8, 4, seed=0)
        with pytest.raises(ValueError):
            build_channel_visual_graph(np.ones((1, 8)), [0], 3, w)

    def test_single_group_degenerate_split(self):
        d = 4
        proj = np.vstack([np.eye(4)])  # (4, 4): R=1 group of the whole vector
        w = ProjectionWeights(np.eye(d), proj)
        rep = np.array([[1.0, -1.0, 2.0, 0.5]])
        g = build_channel_visual_graph(rep, [3], 1, w)
        assert g.n_nodes == 1
        assert np.allclose(g.embeddings[0], rep[0])


class TestSelectClassRepresentatives:
    def test_highest_probability_wins_ties_lowest_index(self):
        emb = np.arange(8.0).reshape(4, 2)
        classes = [1, 0, 1, 0]
        probs = [0.9, 0.3, 0.9, 0.8]
        reps, rep_cls, rows = select_class_representatives(emb, classes, probs)
        assert rep_cls.tolist() == [0, 1]
        assert rows.tolist() == [3, 0]  # class 1 tie between rows 0 and 2 -> 0


class TestDeriveSupervisionMask:
    def test_rule_examples(self, kb):
        g = build_linguistic_graph(kb, M=2, kind="part")
        cat = kb.classes.index("cat")
        eye = kb.parts.index("eye")
        labels = derive_supervision_mask([eye], g, cat)[0]
        tag_label = {
            (kb.parts[m], kb.classes[c]): labels[i]
            for i, (m, c) in enumerate(g.node_tags())
        }
        assert tag_label[("eye", "person")] == POSITIVE
        assert tag_label[("eye", "cat")] == POSITIVE
        assert tag_label[("finger", "person")] == NEGATIVE
        assert tag_label[("tail", "cat")] == IGNORE

    def test_all_positive_when_every_node_carries_the_match(self, kb):
        g = build_linguistic_graph(kb, M=1, kind="part")
        bird = kb.classes.index("bird")
        wing = kb.parts.index("wing")
        labels = derive_supervision_mask([wing], g, bird)[0]
        wing_nodes = [i for i, (m, _) in enumerate(g.node_tags()) if m == wing]
        assert all(labels[i] == POSITIVE for i in wing_nodes)

    def test_exhaustive_rule_enumeration(self, kb):
        g = build_linguistic_graph(kb, M=3, kind="part")
        for visual_class in range(len(kb.classes)):
            for m_star in range(len(kb.parts)):
                labels = derive_supervision_mask([m_star], g, visual_class)[0]
                for j, (m, c) in enumerate(g.node_tags()):
                    if m == m_star:
                        expected = POSITIVE
                    elif c != visual_class:
                        expected = NEGATIVE
                    else:
                        expected = IGNORE
                    assert labels[j] == expected

    def test_partition_property(self, kb):
        g = build_linguistic_graph(kb, M=2, kind="state")
        labels = derive_supervision_mask([0, 1, 2], g, 1)
        assert labels.shape == (3, g.n_nodes)
        assert np.all(np.isin(labels, (POSITIVE, NEGATIVE, IGNORE)))


class TestMatchClassSubgraphs:
    def test_forced_single_pair(self, kb):
        lg = build_linguistic_graph(kb, M=1, kind="part")
        w = ProjectionWeights(np.eye(4), np.ones((2, 4)))
        matched = np.array([[0.0, 1.0, 0.0, 0.0]])
        unmatched = np.array([[0.1, 0.9, 0.05, 0.0]])
        vg = build_spatial_visual_graph(matched, [1], unmatched, k=2, weights=w)
        sub = match_class_subgraphs(vg, lg, 1)
        assert sub is not None
        assert len(sub.matched_nodes) == 1
        assert sub.matched_nodes[0] == lg.nodes_of_class(1)[0]

    def test_absent_class_returns_none(self, kb):
        lg = build_linguistic_graph(kb, M=2, kind="part")
        w = ProjectionWeights(np.eye(4), np.ones((2, 4)))
        vg = build_spatial_visual_graph(
            np.array([[1.0, 0, 0, 0]]), [0], np.array([[0.9, 0.1, 0.0, 0.0]]),
            k=2, weights=w,
        )
        assert match_class_subgraphs(vg, lg, 2) is None

    def test_dominant_pairings_follow_assignment_oracle(self):
        # Orthonormal embeddings with one dominant pairing per visual node.
        from scipy.optimize import linear_sum_assignment

        rng = np.random.default_rng(5)
        d = 8
        basis = np.eye(d)
        l_emb = basis[:4]
        perm = [2, 0, 3, 1]
        v_emb = np.stack([
            0.95 * l_emb[p] + 0.05 * rng.normal(size=d) for p in perm
        ])
        from modalmatch.graphs import LinguisticGraph, VisualGraph

        lg = LinguisticGraph(
            embeddings=l_emb,
            modifier_idx=np.arange(4),
            class_idx=np.zeros(4, dtype=int),
            edges=[],
            kind="part",
            nodes_per_class=4,
        )
        vg = VisualGraph(
            embeddings=v_emb,
            class_idx=np.zeros(4, dtype=int),
            origins=[("spatial", i) for i in range(4)],
            edges=[],
        )
        sub = match_class_subgraphs(vg, lg, 0, epsilon=0.05, max_iter=20000)
        from modalmatch.sinkhorn import affinity_matrix

        A = affinity_matrix(v_emb, l_emb)
        rows, cols = linear_sum_assignment(-A)
        assert sub.matched_nodes.tolist() == [int(c) for c in cols[np.argsort(rows)]]
        assert sub.matched_nodes.tolist() == perm

    def test_raw_argmax_variant_can_collapse(self):
        from modalmatch.graphs import LinguisticGraph, VisualGraph

        # Every visual node slightly prefers linguistic node 0.
        l_emb = np.array([[1.0, 0.0, 0.0], [0.8, 0.6, 0.0]])
        v_emb = np.array([[0.9, 0.1, 0.0], [0.95, 0.05, 0.0]])
        lg = LinguisticGraph(l_emb, np.arange(2), np.zeros(2, dtype=int), [], "part", 2)
        vg = VisualGraph(v_emb, np.zeros(2, dtype=int),
                         [("spatial", 0), ("spatial", 1)], [])
        raw = match_class_subgraphs(vg, lg, 0, use_sinkhorn=False)
        relaxed = match_class_subgraphs(vg, lg, 0, epsilon=0.05, max_iter=20000)
        assert raw.distinct_matches == 1
        assert raw.plan is None
        assert relaxed.distinct_matches == 2


class TestProjectionWeights:
    def test_initialize_shapes_and_identity(self):
        w = ProjectionWeights.initialize(8, 4, seed=3)
        assert np.array_equal(w.spatial_proj, np.eye(8))
        assert w.channel_proj.shape == (2, 8)

    def test_initialize_rejects_bad_r(self):
        with pytest.raises(ValueError):
            ProjectionWeights.initialize(8, 3, seed=0)
