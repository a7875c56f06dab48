"""The end-to-end CLI pipeline shared by the CLI tests and the determinism criterion."""
import subprocess
import sys
from pathlib import Path


def pipeline_commands(d):
    d = Path(d)
    ds, table = d / "dataset.ndjson", d / "uq" / "uq_table.txt"
    return [
        ["simulate", "--seed", "5", "--out", d, "--scenario", "crowd", "--pedestrians", "3", "--duration", "3"],
        ["predict", "--dataset", ds, "--predictor", "kinematic", "--samples", "8", "--horizon", "3",
         "--out", d / "pred", "--seed", "5"],
        ["fit-uq", "--dataset", ds, "--horizon", "2", "--samples", "8", "--out", d / "uq", "--seed", "5"],
        ["evaluate", "--dataset", ds, "--predictor", "kinematic", "--out", d / "eval"],
        ["entropy", "--table", table, "--scenes", "2", "--samples", "8", "--horizon", "2",
         "--out", d / "ent", "--seed", "5"],
        ["costmap", "--table", table, "--horizon", "3", "--out", d / "cm", "--seed", "5"],
    ]


def run_pipeline(d):
    """Run every subcommand in a fresh interpreter; returns the output tree as {relative path: bytes}."""
    for cmd in pipeline_commands(d):
        subprocess.run([sys.executable, "-m", "scope_kit", *map(str, cmd)], check=True,
                       capture_output=True, text=True)
    return tree(d)


def tree(d):
    d = Path(d)
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
