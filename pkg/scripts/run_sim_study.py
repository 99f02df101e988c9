#!/usr/bin/env python3
"""Print the simulator study tables: planted recovery, NMS trade-off,
sufficiency and necessity curves, and label granularity."""

from __future__ import annotations

import argparse
import json

from propgen.cli import render
from propgen.experiments import SimStudyConfig, granularity_sim, nms_tradeoff, planted_recovery, prototype_study


def table(columns, rows) -> str:
    return render({"columns": columns, "rows": rows}, "markdown")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--skip-prototypes", action="store_true", help="skip the slow sufficiency/necessity study")
    ap.add_argument("--json", action="store_true", help="emit raw results as JSON instead of tables")
    args = ap.parse_args(argv)

    out: dict = {"planted": [], "nms": {}, "granularity": {}, "sufficiency": {}, "necessity": {}}
    for seed in args.seeds:
        out["planted"].append([seed, planted_recovery(seed=seed)["ari"]])
        out["nms"][seed] = nms_tradeoff(seed=seed)
        out["granularity"][seed] = granularity_sim(seed=seed).to_dict()
        if not args.skip_prototypes:
            st = prototype_study(SimStudyConfig(seed=seed))
            out["sufficiency"][seed] = st.sufficiency.to_dict()
            out["necessity"][seed] = {
                m: [[p, r.extra["necessity"]["100"], r.extra["necessity"]["1000"]] for p, r in sorted(by_p.items())]
                for m, by_p in st.necessity.items()
            }

    if args.json:
        print(json.dumps(out, indent=2, default=str))
        return
    print("## planted-cluster recovery\n" + table(["seed", "ARI"], out["planted"]))
    for seed in args.seeds:
        nms = out["nms"][seed]
        ks = sorted(next(iter(nms.values())))
        rows = [[t, *(nms[t][k] for k in ks)] for t in sorted(nms)]
        print(f"\n## NMS trade-off, seed {seed}\n" + table(["threshold", *(f"AR@{k}" for k in ks)], rows))
        g = out["granularity"][seed]
        print(f"\n## label granularity, seed {seed}\n" + table(g["columns"], g["rows"]))
        if seed in out["sufficiency"]:
            s = out["sufficiency"][seed]
            print(f"\n## sufficiency, seed {seed}\n" + table(s["columns"], s["rows"]))
            rows = [[m, *r] for m, curve in out["necessity"][seed].items() for r in curve]
            print(f"\n## necessity, seed {seed}\n" + table(["method", "P", "rel@100", "rel@1000"], rows))


if __name__ == "__main__":
    main()
