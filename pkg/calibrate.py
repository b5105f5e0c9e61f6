"""Scratch calibration harness for the transfer benchmark (not shipped)."""
import sys
import time

import numpy as np

from modalmatch.pipeline import TrainConfig, evaluate, train
from modalmatch.synth import OntologySpec, generate_benchmark, toy_benchmark_spec


def run(config: TrainConfig, bench):
    res = train(config, bench.train_scenes, bench.kb, bench.ontology.background_prototype)
    rep = evaluate(res.model, bench.eval_scenes)
    return rep, res.model.diagnostics


def variants(base: TrainConfig):
    return {
        "full": base,
        "base": TrainConfig(**{**base.to_dict(), "alpha": 0.0, "beta": 0.0}),
        "raw": TrainConfig(**{**base.to_dict(), "enable_sinkhorn": False}),
        "ind": TrainConfig(**{**base.to_dict(), "mode": "inductive"}),
    }


def main(scenes=200, seeds=(0, 1, 2, 3, 4), **overrides):
    spec_kw = {k[5:]: v for k, v in overrides.items() if k.startswith("spec_")}
    cfg_kw = {k: v for k, v in overrides.items() if not k.startswith("spec_")}
    spec = toy_benchmark_spec()
    if spec_kw:
        doc = spec.to_dict()
        for k, v in spec_kw.items():
            if k == "anchor":
                doc["unseen_anchors"] = {u: [a, v] for u, (a, _) in spec.unseen_anchors.items()}
            else:
                doc[k] = v
        spec = OntologySpec.from_dict(doc)
    base = TrainConfig(tau=0.2, M=4, epsilon=0.1, learning_rate=0.05, steps=300)
    for k, v in cfg_kw.items():
        setattr(base, k, v)
    base.validate()

    rows = {name: [] for name in ("full", "base", "raw", "ind")}
    diags = {name: [] for name in rows}
    t0 = time.time()
    for seed in seeds:
        bench = generate_benchmark(spec, scenes=scenes, seed=1000 + seed)
        for name, cfg in variants(base).items():
            cfg = TrainConfig(**{**cfg.to_dict(), "seed": seed})
            rep, diag = run(cfg, bench)
            rows[name].append((rep.seen_miou, rep.unseen_miou))
            diags[name].append(diag)
    dt = time.time() - t0

    out = {}
    for name, vals in rows.items():
        seen = np.array([s for s, _ in vals])
        unseen = np.array([u for _, u in vals])
        out[name] = (seen.mean(), unseen.mean())
        print(f"{name:>5}: seen {seen.mean():5.1f} (min {seen.min():5.1f})  "
              f"unseen {unseen.mean():5.1f} (min {unseen.min():5.1f})  "
              f"per-seed unseen {np.round(unseen, 1).tolist()}")
    gain = out["full"][1] - out["base"][1]
    seen_drop = out["base"][0] - out["full"][0]
    sink_gain = out["full"][1] - out["raw"][1]
    ind_wins = sum(
        1 for (bs, bu), (is_, iu) in zip(rows["base"], rows["ind"]) if iu > bu
    )
    sp_d_full = np.mean([d["sp_distinct_mean"] for d in diags["full"]])
    sp_d_raw = np.mean([d["sp_distinct_mean"] for d in diags["raw"]])
    print(f"transfer gain {gain:+.1f} (need >= +5)   seen drop {seen_drop:+.1f} (need <= 2)")
    print(f"sinkhorn-vs-raw unseen {sink_gain:+.1f} (need >= 0)   "
          f"distinct full {sp_d_full:.2f} vs raw {sp_d_raw:.2f} (need strict >)")
    print(f"inductive beats baseline on {ind_wins}/5 seeds (need >= 4)   [{dt:.1f}s]")


if __name__ == "__main__":
    kw = {}
    for arg in sys.argv[1:]:
        k, v = arg.split("=")
        try:
            v = int(v)
        except ValueError:
            try:
                v = float(v)
            except ValueError:
                pass
        kw[k] = v
    main(**kw)
