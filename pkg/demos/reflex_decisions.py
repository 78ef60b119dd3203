"""Using a trained model artifact to make reflex decisions for single CBCs.

Two ways a lab could deploy the model:

* variation 1: the clinician orders CBC plus reflex ferritin, and the model
  cancels the ferritin when an order is very unlikely to be wanted;
* variation 2: the clinician orders a CBC only, and the model adds a
  ferritin when an order looks likely.

    python3 demos/reflex_decisions.py [path/to/model_run0.json]

Without an argument a small model is trained first (about a minute).
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from smartreflex import pipeline
from smartreflex.config import load_config

if len(sys.argv) > 1:
    model_path = Path(sys.argv[1])
else:
    out = Path(tempfile.mkdtemp(prefix="smartreflex-decide-"))
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "small.ini", {"paths.output": str(out)})
    print(f"training a small model under {out} ...")
    pipeline.run_pipeline(cfg)
    model_path = out / "models" / "model_run0.json"

# Fields left out count as "no result" and are imputed from the training rows.
cases = {
    "anaemic, microcytic, two ferritins last year": {
        "age": 38, "gender": "F", "HCT": 31.5, "HGB": 10.2, "MCV": 72.0, "RDW": 16.8,
        "FERRITIN_prior_count": 2, "FERRITIN_prior_mean": 9.0, "FERRITIN_prior_min": 7.0,
        "FERRITIN_prior_max": 11.0, "FERRITIN_prior_sum": 18.0, "FERRITIN_prior_std": 2.8,
    },
    "normal CBC, no ferritin history": {
        "age": 45, "gender": "M", "HCT": 45.0, "HGB": 15.0, "MCV": 90.0, "RDW": 13.0,
        "FERRITIN_prior_count": 0,
    },
}
for title, payload in cases.items():
    print(f"\n{title}")
    for mode in ("variation1", "variation2"):
        d = pipeline.decide(model_path, payload, mode)
        print(f"  {mode}: {json.dumps(d)}")

# the same decision through the command line, as a lab system would call it
with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
    json.dump(cases["anaemic, microcytic, two ferritins last year"], fh)
cmd = [sys.executable, "-m", "smartreflex", "--quiet", "decide", "--model", str(model_path),
       "--input", fh.name, "--mode", "variation2"]
print("\n$ smartreflex decide --model ... --input case.json --mode variation2")
print(subprocess.run(cmd, capture_output=True, text=True, check=True).stdout.strip())
