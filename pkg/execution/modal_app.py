"""
hypmax Modal App - runs suite experiments in parallel containers.

Run the default manifest remotely:  modal run execution/modal_app.py
From the CLI:                       python execution/harness.py suite --remote
"""

import json
from pathlib import Path

import modal

from log_config import setup_logging

app = modal.App("hypmax")

# Shared image: numeric stack plus the execution/ modules
image = (
    modal.Image.debian_slim(python_version="3.12")
    .pip_install(
        "numpy>=1.26",
        "scipy>=1.11",
        "python-dotenv>=1.0.0",
    )
    .add_local_python_source("hypgeo", "integrate", "funcops", "weights", "norms", "harness",
                             "log_config")
)

# ============================================
# EXPERIMENT WORKER
# One container per experiment; the heaviest sweeps take tens of minutes
# ============================================


@app.function(image=image, timeout=3600, cpu=2.0)
def run_experiment(config: dict) -> dict:
    """Run one experiment config (ExperimentConfig.to_dict form) and return its report."""
    setup_logging()
    from harness import run_config

    return run_config(config)


@app.function(image=image)
def health() -> dict:
    import numpy
    import scipy

    return {"status": "ok", "numpy": numpy.__version__, "scipy": scipy.__version__}


# ============================================
# LOCAL ENTRYPOINT
# ============================================


@app.local_entrypoint()
def suite(manifest: str = "", out: str = "results"):
    """Fan the manifest out over containers and write reports locally."""
    from harness import DEFAULT_MANIFEST, collect, evaluate, load_config, load_expectations

    configs = load_config(Path(manifest) if manifest else DEFAULT_MANIFEST)
    expectations = load_expectations()
    reports = [r if r["status"] == "failed" else evaluate(r, expectations)
               for r in run_experiment.map([c.to_dict() for c in configs])]
    code = collect(reports, out)
    print(json.dumps({r["label"]: r["status"] for r in reports}, indent=2))
    if code:
        raise SystemExit(code)
