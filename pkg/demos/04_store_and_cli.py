"""The prediction store and the command-line workflow.

Materializes a small planted benchmark into the binary store, round-trips
it through the single-file tabular export, verifies integrity, and then
drives a full experiment run + summary via the CLI entry point.

Run: python3 demos/04_store_and_cli.py
"""

import os
import tempfile

import yaml

from nes.cli import main
from nes.store import PredictionStore, export_tabular, import_tabular

with tempfile.TemporaryDirectory() as tmp:
    bench = os.path.join(tmp, "bench")
    print("== generate a small benchmark ==")
    main(["generate-benchmark", bench, "--families", "3",
          "--archs-per-family", "4", "--seeds-per-arch", "2",
          "--n-val", "64", "--n-test", "64", "--classes", "5"])

    print("\n== export -> import round trip ==")
    export = os.path.join(tmp, "export.npz")
    export_tabular(PredictionStore.open(bench), export)
    imported = import_tabular(export, os.path.join(tmp, "imported"))
    print(f"imported store holds {len(imported.keys())} matrices; "
          f"verify -> {imported.verify()} ok")

    print("\n== run an experiment from a YAML config ==")
    config = dict(
        method="nes-rs", output_dir=os.path.join(tmp, "run"),
        seeds=[0, 1, 2], K=12, P=6, m=3,
        ensemble_sizes=[2, 3], severities=[0, 3],
        source="store", store_path=bench,
    )
    cfg_path = os.path.join(tmp, "config.yaml")
    with open(cfg_path, "w") as fh:
        yaml.safe_dump(config, fh)
    main(["run", cfg_path])
    main(["summarize", os.path.join(tmp, "run"),
          "--output", os.path.join(tmp, "summary")])

    print("\nsummary head:")
    with open(os.path.join(tmp, "summary", "summary.csv")) as fh:
        for line in list(fh)[:4]:
            print("  " + line.rstrip()[:110])
