#!/usr/bin/env python3
"""Regenerate the frozen golden-run fixtures.

Run from the repo root after any change to prompt templates, stage bindings,
or result serialization:

    python scripts/regen_golden.py

Also refreshes the golden evaluation report for the CLI test.
"""

import json
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from privmeter import pipeline  # noqa: E402
from privmeter.datasetio import result_to_json  # noqa: E402

import golden_scenario  # noqa: E402


def main():
    fixtures = ROOT / "fixtures"
    backend = golden_scenario.build_backend()
    ctx = golden_scenario.golden_context()
    cfg = golden_scenario.golden_config()

    with open(fixtures / "golden_backend.json", "w", encoding="utf-8") as fh:
        json.dump(backend.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    result = pipeline.run(ctx, cfg, backend)
    doc = result_to_json(result)
    assert result.k_hat == golden_scenario.EXPECTED_K_HAT, result.k_hat
    with open(fixtures / "golden_result.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"golden run: k_hat={result.k_hat} raw_k={result.raw_k}")
    print(f"transcript entries: {len(result.transcript)}")

    report = subprocess.run(
        [
            sys.executable, "-m", "privmeter.cli", "evaluate",
            str(fixtures / "sample_dataset.json"),
            str(fixtures / "sample_predictions.json"),
            "--a", "5",
        ],
        capture_output=True, text=True, check=True, cwd=ROOT,
    )
    (fixtures / "golden_report.json").write_text(report.stdout)
    print("golden report written")


if __name__ == "__main__":
    main()
