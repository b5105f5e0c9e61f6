"""Toy training loop and seen/unseen evaluation.

Desk-scale stand-ins for the full segmentation stack: per-scene "queries"
are ground-truth connected regions (at most 8), assigned to object regions
by minimum-cost bipartite matching. Matched queries drive the classification
match loss; unmatched ones feed the spatial graph, channel groups of the
best matched query per class feed the channel graph, and both graphs are
matched against the knowledge-base linguistic graphs to produce the squared
matching losses. Plain gradient descent updates the semantic projection and
the two graph projections; the transport plan, hard matches, and derived
labels are constants within a step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .assignment import build_assignment_cost, hungarian
from .core import ShapeError, as_matrix, softmax_with_temperature
from .graphs import (
    KnowledgeBase,
    LinguisticGraph,
    ProjectionWeights,
    build_channel_visual_graph,
    build_linguistic_graph,
    build_spatial_visual_graph,
    derive_supervision_mask,
    match_class_subgraphs,
    select_class_representatives,
)
from .losses import (
    classification_match_loss,
    dice_loss,
    focal_loss,
    matching_loss_embeddings,
    total_loss,
)
from .synth import ToyScene

log = logging.getLogger(__name__)

MAX_QUERIES = 8

_CONFIG_FIELDS = {
    "k", "R", "alpha", "beta", "tau", "M", "epsilon", "max_iter", "tol",
    "learning_rate", "steps", "seed", "mode", "enable_sp", "enable_cs",
    "enable_sinkhorn", "lambda_mask", "normalize_matching",
}


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    Paper-style defaults (k=3, R=4, alpha=beta=2, tau=0.01, M=10); toy runs
    override tau, M, learning_rate, and steps to suit the desk-scale world.
    """

    k: int = 3
    R: int = 4
    alpha: float = 2.0
    beta: float = 2.0
    tau: float = 0.01
    M: int = 10
    epsilon: float = 0.1
    max_iter: int = 1000
    tol: float = 1e-6
    learning_rate: float = 0.05
    steps: int = 200
    seed: int = 0
    mode: str = "transductive"
    enable_sp: bool = True
    enable_cs: bool = True
    enable_sinkhorn: bool = True
    lambda_mask: float = 1.0
    # Mean instead of plain-sum reduction for the matching losses; at desk
    # scale the summed form dwarfs the match loss for any usable alpha/beta.
    normalize_matching: bool = True

    def validate(self) -> "TrainConfig":
        if self.k < 2:
            raise ValueError(f"k must be at least 2, got {self.k}")
        if self.R < 1:
            raise ValueError(f"R must be at least 1, got {self.R}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.M < 1:
            raise ValueError(f"M must be at least 1, got {self.M}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")
        if self.mode not in ("inductive", "transductive"):
            raise ValueError(f"mode must be 'inductive' or 'transductive', got {self.mode!r}")
        for name in ("alpha", "beta", "lambda_mask"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        unknown = sorted(set(doc) - _CONFIG_FIELDS)
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**doc).validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepRecord:
    """Loss components logged at each step."""

    step: int
    l_mask: float
    l_match: float
    l_sp: float
    l_cs: float
    total: float


@dataclass
class TrainedModel:
    """Learned parameters plus everything evaluation needs."""

    w_sem: np.ndarray
    weights: ProjectionWeights
    classifier_embeddings: np.ndarray
    class_names: list[str]
    n_seen: int
    mode: str
    config: dict
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "w_sem": self.w_sem.tolist(),
            "spatial_proj": self.weights.spatial_proj.tolist(),
            "channel_proj": self.weights.channel_proj.tolist(),
            "classifier_embeddings": self.classifier_embeddings.tolist(),
            "class_names": list(self.class_names),
            "n_seen": self.n_seen,
            "mode": self.mode,
            "config": dict(self.config),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedModel":
        return cls(
            w_sem=np.asarray(doc["w_sem"], dtype=np.float64),
            weights=ProjectionWeights(
                np.asarray(doc["spatial_proj"], dtype=np.float64),
                np.asarray(doc["channel_proj"], dtype=np.float64),
            ),
            classifier_embeddings=np.asarray(
                doc["classifier_embeddings"], dtype=np.float64
            ),
            class_names=[str(s) for s in doc["class_names"]],
            n_seen=int(doc["n_seen"]),
            mode=str(doc["mode"]),
            config=dict(doc["config"]),
            diagnostics=dict(doc["diagnostics"]),
        )


@dataclass
class TrainResult:
    model: TrainedModel
    records: list[StepRecord]


@dataclass
class SceneContext:
    """Per-scene precomputation: queries and ground-truth regions."""

    features: np.ndarray       # (n_queries, d) mean raw feature per query
    masks: np.ndarray          # (n_queries, n_cells) binary query masks
    gt_classes: list[int]      # knowledge-base class index per object
    gt_masks: np.ndarray       # (n_objects, n_cells) binary object masks


def _background_components(labels: np.ndarray, grid: tuple[int, int]) -> list[list[int]]:
    h, w = grid
    seen = np.zeros(labels.size, dtype=bool)
    comps = []
    for start in range(labels.size):
        if labels[start] != 0 or seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            cell = stack.pop()
            comp.append(cell)
            r, c = divmod(cell, w)
            for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= rr < h and 0 <= cc < w:
                    nxt = rr * w + cc
                    if labels[nxt] == 0 and not seen[nxt]:
                        seen[nxt] = True
                        stack.append(nxt)
        comps.append(sorted(comp))
    return comps


def build_scene_context(scene: ToyScene, max_queries: int = MAX_QUERIES) -> SceneContext:
    """Cluster a scene into queries by ground-truth connected regions.

    Object part patches come first (object order, then part order), followed
    by background components in row-major discovery order. If the count
    exceeds `max_queries` the largest regions win, ties by discovery order.
    """
    n_cells = scene.features.shape[0]
    regions: list[list[int]] = []
    for obj in scene.objects:
        for part_idx in obj.part_cells:
            cells = obj.part_cells[part_idx]
            if cells:
                regions.append(list(cells))
    regions.extend(_background_components(scene.labels, scene.grid))

    if len(regions) > max_queries:
        order = sorted(range(len(regions)), key=lambda i: (-len(regions[i]), i))
        keep = sorted(order[:max_queries])
        regions = [regions[i] for i in keep]

    feats = np.stack([scene.features[cells].mean(axis=0) for cells in regions])
    masks = np.zeros((len(regions), n_cells))
    for qi, cells in enumerate(regions):
        masks[qi, cells] = 1.0

    gt_classes = [obj.class_idx for obj in scene.objects]
    gt_masks = np.zeros((len(scene.objects), n_cells))
    for gi, obj in enumerate(scene.objects):
        gt_masks[gi, obj.cells] = 1.0
    return SceneContext(feats, masks, gt_classes, gt_masks)


@dataclass
class _GraphSelection:
    """Frozen per-class selection for one matching branch."""

    class_idx: int
    query_rows: list[int]          # query index per visual node
    labels: np.ndarray             # (n_nodes, n_linguistic) tri-state
    distinct: int
    marginal_error: float
    groups: list[int] | None = None  # channel group per node (channel branch)


@dataclass
class StepSelection:
    """Everything held constant while differentiating one step."""

    pairs: list[tuple[int, int]]
    sp: list[_GraphSelection]
    cs: list[_GraphSelection]


class _TrainState:
    """Mutable parameters plus static per-run structures."""

    def __init__(self, config: TrainConfig, kb: KnowledgeBase, background_embedding, d: int):
        if d % config.R != 0:
            raise ValueError(f"R={config.R} must divide the embedding dim d={d}")
        for kind in ("part", "state"):
            count = len(kb.modifiers(kind))
            if config.M > count:
                raise ValueError(
                    f"M={config.M} exceeds the {kind} vocabulary size {count}"
                )
        self.config = config
        self.kb = kb
        self.d = d
        self.w_sem = np.eye(d)
        self.weights = ProjectionWeights.initialize(d, config.R, seed=config.seed)
        bg = np.asarray(background_embedding, dtype=np.float64)
        if bg.shape != (d,):
            raise ShapeError(f"background embedding shape {bg.shape} != ({d},)")
        # Row 0 is the no-object entry; rows 1..C_s are seen classes. The
        # match loss softmax never sees unseen classes.
        self.t_train = np.vstack([bg[None, :], kb.class_embeddings[: kb.n_seen]])
        self.classifier = np.vstack([bg[None, :], kb.class_embeddings])
        self.lgraph_part = build_linguistic_graph(kb, config.M, config.mode, "part")
        self.lgraph_state = build_linguistic_graph(kb, config.M, config.mode, "state")

    def sp_active(self) -> bool:
        return self.config.enable_sp and self.config.alpha > 0

    def cs_active(self) -> bool:
        return self.config.enable_cs and self.config.beta > 0


def _class_probs(state: _TrainState, q_sem: np.ndarray) -> np.ndarray:
    norms = np.maximum(np.linalg.norm(q_sem, axis=1), 1e-300)
    t = state.t_train
    t_unit = t / np.linalg.norm(t, axis=1, keepdims=True)
    cos = (q_sem / norms[:, None]) @ t_unit.T
    return np.stack([softmax_with_temperature(row, state.config.tau) for row in cos])


def select_step(state: _TrainState, ctx: SceneContext) -> StepSelection:
    """Assignment, graph-node selection, hard matches, and label derivation.

    Everything returned here is treated as constant by `step_losses`; no
    gradient flows through the transport plan or the derived labels.
    """
    cfg = state.config
    q_sem = ctx.features @ state.w_sem
    probs = _class_probs(state, q_sem)
    gt_cols = [c + 1 for c in ctx.gt_classes]
    cost = build_assignment_cost(
        probs, list(ctx.masks), gt_cols, list(ctx.gt_masks), cfg.lambda_mask
    )
    assign = hungarian(cost)
    pairs = assign.pairs

    sp_sel: list[_GraphSelection] = []
    cs_sel: list[_GraphSelection] = []
    if pairs and (state.sp_active() or state.cs_active()):
        matched_rows = [q for q, _ in pairs]
        matched_cls = [ctx.gt_classes[g] for _, g in pairs]
        unmatched_rows = assign.unmatched_queries

        if state.sp_active() and unmatched_rows:
            vg = build_spatial_visual_graph(
                q_sem[matched_rows], matched_cls, q_sem[unmatched_rows],
                cfg.k, state.weights,
            )
            for cls in sorted(set(matched_cls)):
                sub = match_class_subgraphs(
                    vg, state.lgraph_part, cls,
                    epsilon=cfg.epsilon, max_iter=cfg.max_iter, tol=cfg.tol,
                    use_sinkhorn=cfg.enable_sinkhorn,
                )
                if sub is None:
                    continue
                labels = derive_supervision_mask(
                    sub.matched_modifiers, state.lgraph_part, cls
                )
                rows = [unmatched_rows[vg.origins[v][1]] for v in sub.visual_nodes]
                sp_sel.append(_GraphSelection(
                    cls, rows, labels, sub.distinct_matches,
                    sub.plan.marginal_error if sub.plan is not None else 0.0,
                ))

        if state.cs_active():
            own_probs = np.asarray(
                [probs[q, ctx.gt_classes[g] + 1] for q, g in pairs]
            )
            reps, rep_cls, rep_rows = select_class_representatives(
                q_sem[matched_rows], matched_cls, own_probs
            )
            vg = build_channel_visual_graph(reps, rep_cls, cfg.R, state.weights)
            for cls in sorted(int(c) for c in set(rep_cls.tolist())):
                sub = match_class_subgraphs(
                    vg, state.lgraph_state, cls,
                    epsilon=cfg.epsilon, max_iter=cfg.max_iter, tol=cfg.tol,
                    use_sinkhorn=cfg.enable_sinkhorn,
                )
                if sub is None:
                    continue
                labels = derive_supervision_mask(
                    sub.matched_modifiers, state.lgraph_state, cls
                )
                rows = [
                    matched_rows[rep_rows[vg.origins[v][1]]] for v in sub.visual_nodes
                ]
                groups = [vg.origins[v][2] for v in sub.visual_nodes]
                cs_sel.append(_GraphSelection(
                    cls, rows, labels, sub.distinct_matches,
                    sub.plan.marginal_error if sub.plan is not None else 0.0,
                    groups=groups,
                ))
    return StepSelection(pairs, sp_sel, cs_sel)


def step_losses(state: _TrainState, ctx: SceneContext, sel: StepSelection):
    """Loss components and analytic parameter gradients for one step.

    Returns (l_mask, l_match, l_sp, l_cs, grads). Gradients are unweighted
    per component ('w_sem_match'/'w_sem_sp'/'w_sem_cs' for the semantic
    projection, 'spatial_proj'/'channel_proj' for the graph projections);
    the caller applies the alpha/beta weighting.
    """
    cfg = state.config
    d = state.d
    q_sem = ctx.features @ state.w_sem
    grads = {
        "w_sem_match": np.zeros((d, d)),
        "w_sem_sp": np.zeros((d, d)),
        "w_sem_cs": np.zeros((d, d)),
        "spatial_proj": np.zeros_like(state.weights.spatial_proj),
        "channel_proj": np.zeros_like(state.weights.channel_proj),
    }

    l_mask = 0.0
    l_match = 0.0
    if sel.pairs:
        inv = 1.0 / len(sel.pairs)
        for q, g in sel.pairs:
            res = classification_match_loss(
                q_sem[q], state.t_train, ctx.gt_classes[g] + 1, cfg.tau
            )
            l_match += inv * res.value
            grads["w_sem_match"] += inv * np.outer(ctx.features[q], res.gradients["q"])
            l_mask += inv * (
                dice_loss(ctx.masks[q], ctx.gt_masks[g]).value
                + focal_loss(ctx.masks[q], ctx.gt_masks[g]).value
            )

    l_sp = 0.0
    for gsel in sel.sp:
        feats = ctx.features[gsel.query_rows]
        sem = feats @ state.w_sem
        nodes = sem @ state.weights.spatial_proj
        res = matching_loss_embeddings(
            nodes, state.lgraph_part.embeddings, gsel.labels, cfg.tau,
            normalize=cfg.normalize_matching,
        )
        l_sp += res.value
        dnodes = res.gradients["nodes"]
        grads["spatial_proj"] += sem.T @ dnodes
        grads["w_sem_sp"] += feats.T @ (dnodes @ state.weights.spatial_proj.T)

    l_cs = 0.0
    group = d // cfg.R
    for gsel in sel.cs:
        feats = ctx.features[gsel.query_rows]
        sem = feats @ state.w_sem
        slices = gsel.groups
        groups = np.stack([
            sem[i, s * group : (s + 1) * group] for i, s in enumerate(slices)
        ])
        nodes = groups @ state.weights.channel_proj
        res = matching_loss_embeddings(
            nodes, state.lgraph_state.embeddings, gsel.labels, cfg.tau,
            normalize=cfg.normalize_matching,
        )
        l_cs += res.value
        dnodes = res.gradients["nodes"]
        grads["channel_proj"] += groups.T @ dnodes
        dgroups = dnodes @ state.weights.channel_proj.T
        dsem = np.zeros_like(sem)
        for i, s in enumerate(slices):
            dsem[i, s * group : (s + 1) * group] = dgroups[i]
        grads["w_sem_cs"] += feats.T @ dsem
    return l_mask, l_match, l_sp, l_cs, grads


def train(
    config: TrainConfig,
    scenes: list[ToyScene],
    kb: KnowledgeBase,
    background_embedding,
) -> TrainResult:
    """Run the full training loop over precomputed scene contexts.

    Steps cycle through scenes in order; each step performs assignment,
    graph construction, per-class subgraph matching, supervision derivation,
    and one gradient-descent update of the semantic and graph projections.
    """
    config.validate()
    if not scenes:
        raise ValueError("no training scenes supplied")
    d = scenes[0].features.shape[1]
    state = _TrainState(config, kb, background_embedding, d)
    contexts = [build_scene_context(s) for s in scenes]

    records = []
    sp_distinct, sp_err, cs_distinct = [], [], []
    for step in range(config.steps):
        ctx = contexts[step % len(contexts)]
        sel = select_step(state, ctx)
        l_mask, l_match, l_sp, l_cs, grads = step_losses(state, ctx, sel)
        total = total_loss(l_mask, l_match, l_sp, l_cs, config.alpha, config.beta)
        if not np.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at step {step}: mask={l_mask}, match={l_match}, "
                f"sp={l_sp}, cs={l_cs}"
            )
        lr = config.learning_rate
        state.w_sem -= lr * (
            grads["w_sem_match"]
            + config.alpha * grads["w_sem_sp"]
            + config.beta * grads["w_sem_cs"]
        )
        state.weights.spatial_proj -= lr * config.alpha * grads["spatial_proj"]
        state.weights.channel_proj -= lr * config.beta * grads["channel_proj"]

        records.append(StepRecord(step, l_mask, l_match, l_sp, l_cs, total))
        for gsel in sel.sp:
            sp_distinct.append(gsel.distinct)
            sp_err.append(gsel.marginal_error)
        for gsel in sel.cs:
            cs_distinct.append(gsel.distinct)

    diagnostics = {
        "sp_distinct_mean": float(np.mean(sp_distinct)) if sp_distinct else 0.0,
        "cs_distinct_mean": float(np.mean(cs_distinct)) if cs_distinct else 0.0,
        "sp_marginal_error_mean": float(np.mean(sp_err)) if sp_err else 0.0,
        "sp_matches": len(sp_distinct),
        "cs_matches": len(cs_distinct),
        "unseen_nodes_excluded": config.mode == "inductive",
        "sinkhorn_enabled": bool(config.enable_sinkhorn),
    }
    model = TrainedModel(
        w_sem=state.w_sem,
        weights=state.weights,
        classifier_embeddings=state.classifier,
        class_names=["background"] + kb.classes,
        n_seen=kb.n_seen,
        mode=config.mode,
        config=config.to_dict(),
        diagnostics=diagnostics,
    )
    return TrainResult(model, records)


def harmonic_mean(seen: float, unseen: float) -> float:
    """2su/(s+u); returns 0 (and logs) when both inputs are zero."""
    if seen < 0 or unseen < 0:
        raise ValueError(f"harmonic mean needs nonnegative inputs, got {seen}, {unseen}")
    if seen == 0 and unseen == 0:
        log.warning("harmonic mean of (0, 0) defined as 0")
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


@dataclass
class MetricsReport:
    """Per-class IoU (percent), split means, harmonic mean, diagnostics."""

    per_class_iou: dict[str, float]
    seen_miou: float
    unseen_miou: float
    harmonic: float
    excluded_classes: list[str]
    mode: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_class_iou": dict(self.per_class_iou),
            "seen_miou": self.seen_miou,
            "unseen_miou": self.unseen_miou,
            "harmonic": self.harmonic,
            "excluded_classes": list(self.excluded_classes),
            "mode": self.mode,
            "diagnostics": dict(self.diagnostics),
        }

    def format_table(self) -> str:
        lines = [f"{'class':<16} {'IoU%':>7}"]
        for name, iou in self.per_class_iou.items():
            lines.append(f"{name:<16} {iou:>7.1f}")
        lines.append("-" * 24)
        lines.append(f"{'seen mIoU':<16} {self.seen_miou:>7.1f}")
        lines.append(f"{'unseen mIoU':<16} {self.unseen_miou:>7.1f}")
        lines.append(f"{'harmonic':<16} {self.harmonic:>7.1f}")
        return "\n".join(lines)


def confusion_matrix(model: TrainedModel, scenes: list[ToyScene]) -> np.ndarray:
    """Ground truth x prediction counts over all cells of all scenes."""
    emb = as_matrix(model.classifier_embeddings, "classifier_embeddings")
    n_labels = emb.shape[0]
    t_unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    conf = np.zeros((n_labels, n_labels), dtype=np.int64)
    for scene in scenes:
        feats = scene.features @ model.w_sem
        norms = np.maximum(np.linalg.norm(feats, axis=1), 1e-300)
        preds = np.argmax((feats / norms[:, None]) @ t_unit.T, axis=1)
        idx = scene.labels * n_labels + preds
        conf += np.bincount(idx, minlength=n_labels * n_labels).reshape(
            n_labels, n_labels
        )
    return conf


def evaluate(
    model: TrainedModel,
    scenes: list[ToyScene],
    class_embeddings=None,
    mode: str | None = None,
) -> MetricsReport:
    """Cell-wise cosine classification followed by IoU aggregation.

    Every cell is assigned the argmax-cosine label over the full classifier
    set (background plus all classes in both modes). Classes absent from the
    ground truth are excluded from the split means and reported by name.
    """
    if class_embeddings is not None:
        model = TrainedModel(
            w_sem=model.w_sem,
            weights=model.weights,
            classifier_embeddings=as_matrix(class_embeddings, "class_embeddings"),
            class_names=model.class_names,
            n_seen=model.n_seen,
            mode=model.mode,
            config=model.config,
            diagnostics=model.diagnostics,
        )
    conf = confusion_matrix(model, scenes)
    names = model.class_names
    tp = np.diag(conf).astype(np.float64)
    gt_counts = conf.sum(axis=1).astype(np.float64)
    pred_counts = conf.sum(axis=0).astype(np.float64)

    per_class: dict[str, float] = {}
    excluded: list[str] = []
    seen_vals, unseen_vals = [], []
    for label in range(len(names)):
        if gt_counts[label] == 0:
            if label > 0:
                excluded.append(names[label])
                log.warning("class '%s' absent from ground truth; IoU undefined", names[label])
            continue
        union = gt_counts[label] + pred_counts[label] - tp[label]
        iou = 100.0 * tp[label] / union
        per_class[names[label]] = float(iou)
        if label == 0:
            continue  # background stays out of the split means
        if label <= model.n_seen:
            seen_vals.append(iou)
        else:
            unseen_vals.append(iou)

    seen_miou = float(np.mean(seen_vals)) if seen_vals else 0.0
    unseen_miou = float(np.mean(unseen_vals)) if unseen_vals else 0.0
    diagnostics = dict(model.diagnostics)
    diagnostics["cells_evaluated"] = int(conf.sum())
    return MetricsReport(
        per_class_iou=per_class,
        seen_miou=seen_miou,
        unseen_miou=unseen_miou,
        harmonic=harmonic_mean(seen_miou, unseen_miou),
        excluded_classes=excluded,
        mode=mode or model.mode,
        diagnostics=diagnostics,
    )
