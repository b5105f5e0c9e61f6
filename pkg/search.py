"""Scratch random search over benchmark/config knobs (not shipped)."""
import itertools
import sys
import time

import numpy as np

from modalmatch.pipeline import TrainConfig, evaluate, train
from modalmatch.synth import OntologySpec, generate_benchmark, toy_benchmark_spec


def build_spec(anchor, text_anchor, rho, noise):
    doc = toy_benchmark_spec().to_dict()
    doc["unseen_anchors"] = {u: [a, anchor] for u, (a, _) in toy_benchmark_spec().unseen_anchors.items()}
    doc["text_anchor_scale"] = text_anchor
    doc["text_structure"] = rho
    doc["noise_scale"] = noise
    return OntologySpec.from_dict(doc)


def score(spec, cfg, scenes, seeds):
    rows = {}
    diags = {}
    for name, over in (
        ("full", {}),
        ("base", {"alpha": 0.0, "beta": 0.0}),
        ("raw", {"enable_sinkhorn": False}),
        ("ind", {"mode": "inductive"}),
    ):
        rows[name] = []
        diags[name] = []
        for seed in seeds:
            bench = generate_benchmark(spec, scenes=scenes, seed=1000 + seed)
            c = TrainConfig(**{**cfg.to_dict(), **over, "seed": seed})
            res = train(c, bench.train_scenes, bench.kb, bench.ontology.background_prototype)
            rep = evaluate(res.model, bench.eval_scenes)
            rows[name].append((rep.seen_miou, rep.unseen_miou))
            diags[name].append(res.model.diagnostics)
    f = np.array(rows["full"]); b = np.array(rows["base"])
    r = np.array(rows["raw"]); i = np.array(rows["ind"])
    gain = f[:, 1].mean() - b[:, 1].mean()
    seen_drop = b[:, 0].mean() - f[:, 0].mean()
    sink = f[:, 1].mean() - r[:, 1].mean()
    ind_wins = int((i[:, 1] > b[:, 1]).sum())
    dist_gap = (np.mean([d["sp_distinct_mean"] for d in diags["full"]])
                - np.mean([d["sp_distinct_mean"] for d in diags["raw"]]))
    margins = {
        "gain": gain - 5.0,
        "seen": 2.0 - seen_drop,
        "sink": sink,
        "ind": ind_wins - 4,
        "dist": dist_gap,
    }
    summary = (f"full {f[:,0].mean():.0f}/{f[:,1].mean():.0f} "
               f"base {b[:,0].mean():.0f}/{b[:,1].mean():.0f} "
               f"gain {gain:+.1f} drop {seen_drop:+.1f} sink {sink:+.1f} "
               f"ind {ind_wins}/5 dist {dist_gap:+.2f} "
               f"useen/seed {np.round(f[:,1],0).tolist()} vs {np.round(b[:,1],0).tolist()}")
    return min(margins.values()), margins, summary


def main():
    grid = list(itertools.product(
        (0.5,),              # anchor (visual)
        (0.15, 0.25, 0.4),   # text anchor
        (0.3, 0.45, 0.7),    # rho text structure
        (0.12,),             # noise
        (0.1, 0.2),          # tau
        (2.0, 5.0),          # alpha=beta
    ))
    rng = np.random.default_rng(0)
    rng.shuffle(grid)
    results = []
    t0 = time.time()
    for n, (anchor, ta, rho, noise, tau, ab) in enumerate(grid):
        spec = build_spec(anchor, ta, rho, noise)
        cfg = TrainConfig(tau=tau, M=2, learning_rate=0.2, steps=800,
                          alpha=ab, beta=ab)
        s, margins, summary = score(spec, cfg, scenes=60, seeds=(0, 1, 2, 3, 4))
        results.append((s, (anchor, ta, rho, noise, tau, ab)))
        print(f"[{n}] ta={ta} rho={rho} tau={tau} ab={ab} -> min-margin {s:+.1f} | {summary}",
              flush=True)
        if time.time() - t0 > 540:
            print("time budget reached")
            break
    results.sort(reverse=True)
    print("\nbest:", results[:3])


if __name__ == "__main__":
    main()
