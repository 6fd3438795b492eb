"""Run scenario configs and print their PASS/FAIL checks.

Each config runs in its own process; ``--jobs`` runs several at once.
"""
import argparse
import io
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from heterodg.config import load_config
from heterodg.harness import run_scenario

ROOT = Path(__file__).resolve().parent.parent
DEFAULT = ["convergence", "p_convergence", "timestep_convergence", "travelling_wave",
           "equilibrium_wavefront", "anisotropic_slice", "radial_fibres"]


def run_one(path, out_root):
    cfg = load_config(path)
    if out_root:
        cfg = load_config(path, overrides={("experiment", "output"): Path(out_root) / Path(path).stem})
    buf = io.StringIO()
    t0 = time.perf_counter()
    res = run_scenario(cfg, buf)
    return path, time.perf_counter() - t0, res.messages, buf.getvalue()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=DEFAULT, help="config names under configs/ or paths")
    ap.add_argument("--out", help="output root (default: each config's own output key)")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    paths = [p if p.endswith(".ini") else str(ROOT / "configs" / f"{p}.ini") for p in args.names]
    failed = 0
    with ProcessPoolExecutor(args.jobs) as pool:
        for path, secs, messages, log in pool.map(run_one, paths, [args.out] * len(paths)):
            print(f"== {Path(path).stem} ({secs:.0f} s)")
            print(log, end="")
            failed += sum(m.startswith("FAIL") for m in messages)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
