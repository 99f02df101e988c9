"""Drive every CLI subcommand once over the shipped fixtures and a small simulated world."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from propgen import FIXTURES
from propgen.cli import main

SUBCOMMANDS = (
    "simulate", "validate", "eval-ap", "similarity", "fuse", "eval-ar", "nms-sweep", "select",
    "build-dataset", "relabel", "sufficiency", "necessity", "granularity", "pseudo-gt",
)


@dataclass
class Step:
    name: str
    argv: list[str]
    out: Path
    code: int


def run(argv: list[str], out: Path) -> int:
    return main([*argv, "--out", str(out)])


def run_pipeline(root: Path) -> dict[str, Step]:
    """Run each subcommand into ``root/<name>``; later steps read earlier outputs."""
    steps: dict[str, Step] = {}

    def step(name: str, argv: list[str]) -> Path:
        out = root / name
        code = run(argv, out)
        steps[name] = Step(name, argv, out, code)
        return out

    sim_cfg = root / "simulate.json"
    sim_cfg.write_text(json.dumps({"sim": {"n_images": 60}, "detector": {"copies": 2}}))
    world = step("simulate", ["simulate", "--config", str(sim_cfg), "--seed", "0"])
    ann, tree, det = (str(world / n) for n in ("annotations.json", "hierarchy.json", "detections.json"))

    step("validate", ["validate", "--annotations", ann, "--tree", tree, "--results", det])
    ap = step("eval-ap", ["eval-ap", "--gt", ann, "--detections", det, "--cross"])
    sim = step("similarity", ["similarity", "--ap-table", str(ap / "ap_table.json"), "--set", "split_note=all images"])
    fused = step("fuse", ["fuse", "--detections", det, "--annotations", ann, "--nms", "0.5"])
    props = str(fused / "proposals.json")
    step("eval-ar", ["eval-ar", "--gt", ann, "--proposals", props, "--k", "10", "100", "1000"])
    step("nms-sweep", ["nms-sweep", "--gt", ann, "--detections", det, "--thresholds", "0.3", "0.5", "0.7"])
    sel = step("select", ["select", "--method", "oracle-visual", "--p", "4", "--annotations", ann, "--tree", tree,
                          "--similarity", str(sim / "similarity.json")])
    selection = str(sel / "selection.json")
    step("build-dataset", ["build-dataset", "--annotations", ann, "--selection", selection,
                           "--images", "20", "--boxes", "30", "--seed", "1"])
    step("relabel", ["relabel", "--tree", tree, "--annotations", ann, "--level", "1"])

    suff_cfg = root / "sufficiency.toml"
    suff_cfg.write_text(
        f'target_gt = "{ann}"\nbaseline = "{props}"\nks = [100, 1000]\n'
        f'[[conditions]]\nmethod = "oracle-visual"\np = 4\nproposals = "{props}"\n'
    )
    step("sufficiency", ["sufficiency", "--config", str(suff_cfg)])

    nec_cfg = root / "necessity.json"
    nec_cfg.write_text(json.dumps({
        "target_gt": ann, "similarity": str(sim / "similarity.json"),
        "conditions": [{"method": "oracle-visual", "p": 4, "proposals": props, "selection": selection}],
    }))
    step("necessity", ["necessity", "--config", str(nec_cfg)])

    gran_cfg = root / "granularity.json"
    gran_cfg.write_text(json.dumps({
        "tree": tree, "annotations": ann, "target_gt": ann,
        "levels": [{"level": 0, "proposals": None}, {"level": 1, "proposals": props}, {"level": 3, "proposals": props}],
    }))
    step("granularity", ["granularity", "--config", str(gran_cfg)])

    step("pseudo-gt", ["pseudo-gt", "--proposals", str(FIXTURES / "pseudo_proposals.json"),
                       "--weak-labels", str(FIXTURES / "weak_labels.json")])
    assert tuple(steps) == SUBCOMMANDS
    return steps


def result_files(directory: Path) -> dict[str, bytes]:
    """Every file in a run directory except the timestamped manifest."""
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != "manifest.json"}
