"""Visual and linguistic graph construction plus match-derived supervision.

Four graphs are built here: a spatial visual graph over projected unmatched
queries, a channel visual graph over projected channel groups of one matched
query per class, and part/state linguistic graphs over knowledge-base phrase
embeddings selected by relation score. Hard subgraph matches between them
yield tri-state supervision masks for the squared matching losses.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError, as_matrix, as_vector, top_k_indices
from .losses import IGNORE, NEGATIVE, POSITIVE
from .sinkhorn import (
    MarginalSpec,
    TransportPlan,
    affinity_matrix,
    argmax_match,
    sinkhorn_normalize,
)

log = logging.getLogger(__name__)

KEY_SEPARATOR = "|"

_KB_REQUIRED_KEYS = (
    "seen_classes",
    "unseen_classes",
    "parts",
    "states",
    "part_scores",
    "state_scores",
    "class_embeddings",
    "part_phrase_embeddings",
    "state_phrase_embeddings",
)


@dataclass
class KnowledgeBase:
    """Classes, part/state vocabularies, relation scores, phrase embeddings.

    Classes are ordered seen first, then unseen. Scores are (class, modifier)
    grids; phrase embeddings are dense (class, modifier, dim) stacks so every
    selectable pair is guaranteed to have one.
    """

    seen_classes: list[str]
    unseen_classes: list[str]
    parts: list[str]
    states: list[str]
    part_scores: np.ndarray
    state_scores: np.ndarray
    class_embeddings: np.ndarray
    part_phrase_embeddings: np.ndarray
    state_phrase_embeddings: np.ndarray

    @property
    def classes(self) -> list[str]:
        return self.seen_classes + self.unseen_classes

    @property
    def n_seen(self) -> int:
        return len(self.seen_classes)

    @property
    def dim(self) -> int:
        return int(self.class_embeddings.shape[1])

    def modifiers(self, kind: str) -> list[str]:
        return self.parts if kind == "part" else self.states

    def scores(self, kind: str) -> np.ndarray:
        return self.part_scores if kind == "part" else self.state_scores

    def phrase_embeddings(self, kind: str) -> np.ndarray:
        if kind == "part":
            return self.part_phrase_embeddings
        return self.state_phrase_embeddings

    def validate(self) -> "KnowledgeBase":
        classes = self.classes
        if len(set(classes)) != len(classes):
            raise ValueError("class names must be unique across seen and unseen")
        if not classes:
            raise ValueError("knowledge base declares no classes")
        d = self.dim
        for kind in ("part", "state"):
            mods = self.modifiers(kind)
            if len(set(mods)) != len(mods):
                raise ValueError(f"{kind} names must be unique")
            scores = self.scores(kind)
            if scores.shape != (len(classes), len(mods)):
                raise ShapeError(
                    f"{kind}_scores shape {scores.shape} != "
                    f"{(len(classes), len(mods))}"
                )
            if np.any(scores < 0) or not np.all(np.isfinite(scores)):
                raise ValueError(f"{kind}_scores must be finite and nonnegative")
            phrases = self.phrase_embeddings(kind)
            if phrases.shape != (len(classes), len(mods), d):
                raise ShapeError(
                    f"{kind} phrase embeddings shape {phrases.shape} != "
                    f"{(len(classes), len(mods), d)}"
                )
            if not np.all(np.isfinite(phrases)):
                raise ValueError(f"{kind} phrase embeddings contain non-finite values")
        if not np.all(np.isfinite(self.class_embeddings)):
            raise ValueError("class embeddings contain non-finite values")
        return self

    def to_dict(self) -> dict:
        out: dict = {
            "seen_classes": list(self.seen_classes),
            "unseen_classes": list(self.unseen_classes),
            "parts": list(self.parts),
            "states": list(self.states),
            "part_scores": self.part_scores.tolist(),
            "state_scores": self.state_scores.tolist(),
            "class_embeddings": self.class_embeddings.tolist(),
        }
        for kind in ("part", "state"):
            phrases = {}
            mods = self.modifiers(kind)
            emb = self.phrase_embeddings(kind)
            for ci, cls in enumerate(self.classes):
                for mi, mod in enumerate(mods):
                    phrases[f"{mod}{KEY_SEPARATOR}{cls}"] = emb[ci, mi].tolist()
            out[f"{kind}_phrase_embeddings"] = phrases
        return out


def _phrase_array(raw: dict, classes, modifiers, d: int, kind: str) -> np.ndarray:
    out = np.empty((len(classes), len(modifiers), d))
    for ci, cls in enumerate(classes):
        for mi, mod in enumerate(modifiers):
            key = f"{mod}{KEY_SEPARATOR}{cls}"
            if key not in raw:
                raise ValueError(f"missing {kind} phrase embedding for pair '{key}'")
            vec = as_vector(raw[key], f"{kind} phrase '{key}'")
            if vec.size != d:
                raise ValueError(
                    f"{kind} phrase '{key}' has dimension {vec.size}, expected {d}"
                )
            out[ci, mi] = vec
    return out


def knowledge_base_from_dict(doc: dict) -> KnowledgeBase:
    """Build and validate a KnowledgeBase from its JSON document form."""
    for key in _KB_REQUIRED_KEYS:
        if key not in doc:
            raise ValueError(f"knowledge base document missing key '{key}'")
    seen = [str(s) for s in doc["seen_classes"]]
    unseen = [str(s) for s in doc["unseen_classes"]]
    parts = [str(s) for s in doc["parts"]]
    states = [str(s) for s in doc["states"]]
    classes = seen + unseen
    class_emb = as_matrix(doc["class_embeddings"], "class_embeddings")
    if class_emb.shape[0] != len(classes):
        raise ShapeError(
            f"{class_emb.shape[0]} class embeddings for {len(classes)} classes"
        )
    d = class_emb.shape[1]
    kb = KnowledgeBase(
        seen_classes=seen,
        unseen_classes=unseen,
        parts=parts,
        states=states,
        part_scores=np.asarray(doc["part_scores"], dtype=np.float64),
        state_scores=np.asarray(doc["state_scores"], dtype=np.float64),
        class_embeddings=class_emb,
        part_phrase_embeddings=_phrase_array(
            doc["part_phrase_embeddings"], classes, parts, d, "part"
        ),
        state_phrase_embeddings=_phrase_array(
            doc["state_phrase_embeddings"], classes, states, d, "state"
        ),
    )
    return kb.validate()


def load_knowledge_base(path) -> KnowledgeBase:
    """Parse and validate a knowledge-base JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a JSON object at the top level")
    try:
        return knowledge_base_from_dict(doc)
    except (ValueError, ShapeError) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def save_knowledge_base(kb: KnowledgeBase, path) -> None:
    """Write a knowledge base in canonical JSON form (round-trip stable)."""
    from .serialization import dump_canonical_json

    dump_canonical_json(kb.to_dict(), path)


@dataclass
class LinguisticGraph:
    """Phrase-embedding nodes tagged (modifier, class), with binary edges."""

    embeddings: np.ndarray
    modifier_idx: np.ndarray
    class_idx: np.ndarray
    edges: list[tuple[int, int]]
    kind: str
    nodes_per_class: int

    @property
    def n_nodes(self) -> int:
        return int(self.embeddings.shape[0])

    def nodes_of_class(self, class_idx: int) -> np.ndarray:
        return np.flatnonzero(self.class_idx == class_idx)

    def node_tags(self) -> list[tuple[int, int]]:
        return [
            (int(m), int(c)) for m, c in zip(self.modifier_idx, self.class_idx)
        ]


@dataclass
class VisualGraph:
    """Projected visual nodes tagged with a class and a provenance record."""

    embeddings: np.ndarray
    class_idx: np.ndarray
    origins: list[tuple]
    edges: list[tuple[int, int]]

    @property
    def n_nodes(self) -> int:
        return 0 if self.embeddings.size == 0 else int(self.embeddings.shape[0])

    def nodes_of_class(self, class_idx: int) -> np.ndarray:
        return np.flatnonzero(self.class_idx == class_idx)


@dataclass
class ProjectionWeights:
    """Learnable linear maps producing graph node embeddings.

    spatial_proj is (d, d) applied to whole query embeddings; channel_proj is
    (d/R, d) applied to contiguous channel groups.
    """

    spatial_proj: np.ndarray
    channel_proj: np.ndarray

    def __post_init__(self):
        self.spatial_proj = as_matrix(self.spatial_proj, "spatial_proj")
        self.channel_proj = as_matrix(self.channel_proj, "channel_proj")
        d = self.spatial_proj.shape[0]
        if self.spatial_proj.shape != (d, d):
            raise ShapeError(f"spatial_proj must be square, got {self.spatial_proj.shape}")
        if self.channel_proj.shape[1] != d:
            raise ShapeError(
                f"channel_proj maps to dim {self.channel_proj.shape[1]}, expected {d}"
            )

    @classmethod
    def initialize(cls, d: int, R: int, seed: int = 0) -> "ProjectionWeights":
        """Identity spatial map; seeded 1/sqrt(d)-scaled Gaussian channel map
        (its shape forbids an identity)."""
        if R < 1 or d % R != 0:
            raise ValueError(f"R={R} must divide embedding dim d={d}")
        rng = np.random.default_rng(seed)
        channel = rng.normal(size=(d // R, d)) / np.sqrt(d)
        return cls(np.eye(d), channel)


def _same_tag_edges(tags: np.ndarray) -> list[tuple[int, int]]:
    edges = []
    n = len(tags)
    for i in range(n):
        for j in range(i + 1, n):
            if tags[i] == tags[j]:
                edges.append((i, j))
    return edges


def build_linguistic_graph(
    kb: KnowledgeBase, M: int, mode: str = "transductive", kind: str = "part"
) -> LinguisticGraph:
    """Select the top-M modifiers per class by relation score and wire edges.

    Ties are broken by lexicographic modifier name. In inductive mode the
    unseen classes contribute no nodes; transductive mode includes every
    class. Edges connect nodes sharing a class or sharing a modifier.
    """
    if kind not in ("part", "state"):
        raise ValueError(f"kind must be 'part' or 'state', got {kind!r}")
    if mode not in ("inductive", "transductive"):
        raise ValueError(f"mode must be 'inductive' or 'transductive', got {mode!r}")
    modifiers = kb.modifiers(kind)
    if not (1 <= M <= len(modifiers)):
        raise ValueError(f"M={M} must lie in [1, {len(modifiers)}]")
    scores = kb.scores(kind)
    phrases = kb.phrase_embeddings(kind)
    included = range(kb.n_seen if mode == "inductive" else len(kb.classes))

    emb_rows = []
    mod_idx = []
    cls_idx = []
    for ci in included:
        order = sorted(range(len(modifiers)), key=lambda m: (-scores[ci, m], modifiers[m]))
        for mi in order[:M]:
            emb_rows.append(phrases[ci, mi])
            mod_idx.append(mi)
            cls_idx.append(ci)

    embeddings = np.asarray(emb_rows)
    mod_arr = np.asarray(mod_idx, dtype=int)
    cls_arr = np.asarray(cls_idx, dtype=int)
    edges = []
    for i in range(len(mod_idx)):
        for j in range(i + 1, len(mod_idx)):
            if cls_arr[i] == cls_arr[j] or mod_arr[i] == mod_arr[j]:
                edges.append((i, j))
    return LinguisticGraph(embeddings, mod_arr, cls_arr, edges, kind, M)


def build_spatial_visual_graph(
    matched_embeddings,
    matched_classes,
    unmatched_embeddings,
    k: int,
    weights: ProjectionWeights,
) -> VisualGraph:
    """Per class, project the k-1 unmatched queries most similar to that
    class's matched queries into spatial graph nodes.

    Selecting k-1 rather than k keeps the per-class subgraph at the (k-1, M)
    shape the matching constraints prescribe. Classes with no unmatched
    queries contribute an empty node set. Origins record the unmatched-list
    index of each selected query.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    matched = as_matrix(matched_embeddings, "matched_embeddings")
    classes = np.asarray(matched_classes, dtype=int)
    if classes.shape != (matched.shape[0],):
        raise ShapeError("matched_classes must tag every matched embedding")
    if matched.shape[0] == 0:
        raise ValueError("at least one matched query is required")

    unmatched = np.asarray(unmatched_embeddings, dtype=np.float64)
    if unmatched.size == 0:
        return VisualGraph(np.zeros((0, matched.shape[1])), np.zeros(0, dtype=int), [], [])
    unmatched = as_matrix(unmatched, "unmatched_embeddings")

    u_norm = np.linalg.norm(unmatched, axis=1)
    m_norm = np.linalg.norm(matched, axis=1)
    if np.any(u_norm == 0) or np.any(m_norm == 0):
        raise ValueError("zero-norm query embedding")
    sims_all = (unmatched / u_norm[:, None]) @ (matched / m_norm[:, None]).T

    emb_rows = []
    cls_idx = []
    origins = []
    for cls in sorted(set(int(c) for c in classes)):
        cols = np.flatnonzero(classes == cls)
        sims = sims_all[:, cols].max(axis=1)
        for ui in top_k_indices(sims, k - 1):
            emb_rows.append(unmatched[ui] @ weights.spatial_proj)
            cls_idx.append(cls)
            origins.append(("spatial", ui))
    embeddings = np.asarray(emb_rows) if emb_rows else np.zeros((0, matched.shape[1]))
    cls_arr = np.asarray(cls_idx, dtype=int)
    return VisualGraph(embeddings, cls_arr, origins, _same_tag_edges(cls_arr))


def select_class_representatives(embeddings, classes, class_probs):
    """One matched query per class: the highest probability for its own
    class, ties to the lowest query index.

    `class_probs` holds each query's predicted probability for its own
    ground-truth class. Returns (embeddings, class indices, source rows).
    """
    emb = as_matrix(embeddings, "embeddings")
    classes = np.asarray(classes, dtype=int)
    probs = np.asarray(class_probs, dtype=np.float64)
    if classes.shape != (emb.shape[0],) or probs.shape != (emb.shape[0],):
        raise ShapeError("classes and class_probs must tag every embedding")
    rows = []
    for cls in sorted(set(int(c) for c in classes)):
        members = np.flatnonzero(classes == cls)
        rows.append(int(members[np.argmax(probs[members])]))
    rows_arr = np.asarray(rows, dtype=int)
    return emb[rows_arr], classes[rows_arr], rows_arr


def build_channel_visual_graph(
    representative_embeddings,
    representative_classes,
    R: int,
    weights: ProjectionWeights,
) -> VisualGraph:
    """Split each class representative into R contiguous channel groups and
    project every group to a d-dimensional node.

    Callers select one representative per class beforehand (see
    `select_class_representatives`). Origins record (source row, group).
    """
    reps = as_matrix(representative_embeddings, "representative_embeddings")
    classes = np.asarray(representative_classes, dtype=int)
    if classes.shape != (reps.shape[0],):
        raise ShapeError("representative_classes must tag every representative")
    if len(set(classes.tolist())) != len(classes):
        raise ValueError("one representative per class is required")
    d = reps.shape[1]
    if R < 1 or d % R != 0:
        raise ValueError(f"R={R} must divide embedding dim d={d}")
    group = d // R
    if weights.channel_proj.shape != (group, d):
        raise ShapeError(
            f"channel_proj shape {weights.channel_proj.shape} incompatible with "
            f"d={d}, R={R}"
        )

    emb_rows = []
    cls_idx = []
    origins = []
    for row in range(reps.shape[0]):
        for r in range(R):
            emb_rows.append(reps[row, r * group : (r + 1) * group] @ weights.channel_proj)
            cls_idx.append(int(classes[row]))
            origins.append(("channel", row, r))
    cls_arr = np.asarray(cls_idx, dtype=int)
    return VisualGraph(np.asarray(emb_rows), cls_arr, origins, _same_tag_edges(cls_arr))


def derive_supervision_mask(
    matched_modifiers, graph: LinguisticGraph, visual_class: int
) -> np.ndarray:
    """Tri-state labels for each visual node against every linguistic node.

    For a visual node matched to modifier m*: nodes carrying m* are positive
    regardless of class; nodes with a different modifier and a different
    class are negative; nodes with a different modifier but the visual node's
    own class carry no supervision signal.
    """
    matched = np.asarray(matched_modifiers, dtype=int)
    if matched.ndim != 1:
        raise ShapeError("matched_modifiers must be one index per visual node")
    same_mod = graph.modifier_idx[None, :] == matched[:, None]
    same_cls = graph.class_idx[None, :] == int(visual_class)
    labels = np.where(same_mod, POSITIVE, np.where(same_cls, IGNORE, NEGATIVE))
    return labels.astype(np.int8)


@dataclass
class SubgraphMatch:
    """Hard matches for one class's visual subgraph.

    `visual_nodes` are indices into the visual graph, `matched_nodes` the
    linguistic node matched to each, `matched_modifiers` the corresponding
    modifier indices. `plan` is None when the relaxation is bypassed.
    """

    class_idx: int
    visual_nodes: np.ndarray
    matched_nodes: np.ndarray
    matched_modifiers: np.ndarray
    plan: TransportPlan | None
    distinct_matches: int


def match_class_subgraphs(
    vgraph: VisualGraph,
    lgraph: LinguisticGraph,
    class_idx: int,
    epsilon: float = 0.1,
    max_iter: int = 1000,
    tol: float = 1e-6,
    use_sinkhorn: bool = True,
) -> SubgraphMatch | None:
    """Match one class's visual subgraph against its linguistic subgraph.

    Computes the node affinity, relaxes it to a transport plan under the
    subgraph marginals, and reads off each visual node's most matched
    linguistic node. With `use_sinkhorn=False` the argmax is taken on the raw
    affinity instead, which permits the collapse onto a single linguistic
    node that the relaxation is there to prevent. Returns None when either
    graph has no nodes of the class.
    """
    v_nodes = vgraph.nodes_of_class(class_idx)
    l_nodes = lgraph.nodes_of_class(class_idx)
    if v_nodes.size == 0 or l_nodes.size == 0:
        log.debug("class %d absent from a graph; subgraph matching skipped", class_idx)
        return None
    A = affinity_matrix(vgraph.embeddings[v_nodes], lgraph.embeddings[l_nodes])
    plan = None
    if use_sinkhorn:
        spec = MarginalSpec.uniform(v_nodes.size, l_nodes.size)
        plan = sinkhorn_normalize(A, spec, epsilon=epsilon, max_iter=max_iter, tol=tol)
        cols = argmax_match(plan)
    else:
        cols = [int(i) for i in np.argmax(A, axis=1)]
    matched_nodes = l_nodes[np.asarray(cols, dtype=int)]
    return SubgraphMatch(
        class_idx=int(class_idx),
        visual_nodes=v_nodes,
        matched_nodes=matched_nodes,
        matched_modifiers=lgraph.modifier_idx[matched_nodes],
        plan=plan,
        distinct_matches=len(set(cols)),
    )
