"""Run the toy pipeline at several map radii and tabulate the overall metrics.

Usage: python3 scripts/radius_sweep.py WORKDIR [--radii 25,50,100,150,200] [--enc-blocks 3]
"""
import argparse
import json
import logging
from pathlib import Path

from gazemap.fixtures import write_toy_fixture
from gazemap.pipeline import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("workdir", type=Path)
    ap.add_argument("--radii", default="25,50,100,150,200")
    ap.add_argument("--enc-blocks", default="3")
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    toy = a.workdir / "toy"
    if not (toy / "config.toml").exists():
        write_toy_fixture(toy)
    print("radius_m     KLD      CC     NSS     SIM")
    for r in (float(x) for x in a.radii.split(",")):
        out = a.workdir / f"r{r:g}"
        cfg = PipelineConfig.from_toml(toy / "config.toml", out=out, radius_m=r, enc_blocks=a.enc_blocks,
                                       jobs=a.jobs)
        if run_pipeline(cfg) != 0:
            print(f"{r:8g}  pipeline failed, see {out / 'manifest.json'}")
            continue
        m = json.loads((out / "report.json").read_text())["overall"]
        print(f"{r:8g}  {m['KLD']:6.3f}  {m['CC']:6.3f}  {m['NSS']:6.3f}  {m['SIM']:6.3f}")


if __name__ == "__main__":
    main()
