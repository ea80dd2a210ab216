"""Session-scoped artifacts shared by the acceptance suite.

The reference corpus and the two three-seed training sweeps are expensive
(minutes), so they are built once per session and reused by every criterion
that needs them.
"""

import time

import pytest

from sdvsum.datasets import SynthSpec, generate_synthetic
from sdvsum.metrics import evaluate_script_driven
from sdvsum.model import ModelConfig, load_checkpoint, make_score_fn
from sdvsum.training import TrainConfig, train_run

ACCEPT_SEEDS = (41, 42, 43)

# Training recipe for the acceptance sweeps. The architecture stays at its
# defaults (only the dimension follows the 64-dim corpus); the recipe may use
# any step size and any epoch count up to 50, and at 1e-3 the validation
# F-Score plateaus within a handful of epochs, so six epochs per seed keeps
# the whole sweep inside the runtime budget.
ACCEPT_EPOCHS = 6
ACCEPT_LR = 1e-3

SDVSUM_MODEL = ModelConfig(dim=64)
VARIANT3_MODEL = ModelConfig(dim=64, heads=4, use_scaling=True,
                             text_rep="single_vector")


@pytest.fixture(scope="session")
def reference_dataset(tmp_path_factory):
    """The reference synthetic corpus: all SynthSpec defaults, seed 42."""
    out = tmp_path_factory.mktemp("reference")
    t0 = time.monotonic()
    manifest = generate_synthetic(SynthSpec(), out)
    return {"manifest": manifest, "root": out,
            "seconds": time.monotonic() - t0}


def _three_seed_sweep(manifest, model_config, base_dir):
    runs = {}
    t0 = time.monotonic()
    for seed in ACCEPT_SEEDS:
        train_config = TrainConfig(learning_rate=ACCEPT_LR,
                                   epochs=ACCEPT_EPOCHS, seed=seed)
        out = base_dir / f"seed{seed}"
        report = train_run(manifest, model_config, train_config, out)
        weights, loaded_config = load_checkpoint(out / report.checkpoint)
        test = evaluate_script_driven(make_score_fn(weights, loaded_config),
                                      manifest, "test")
        runs[seed] = {
            "report": report,
            "weights": weights,
            "config": loaded_config,
            "out": out,
            "test_fscore": test.fscore,
        }
    return {"runs": runs, "seconds": time.monotonic() - t0}


@pytest.fixture(scope="session")
def sdvsum_runs(reference_dataset, tmp_path_factory):
    """Default-architecture model trained on the reference corpus, 3 seeds."""
    base = tmp_path_factory.mktemp("sdvsum_runs")
    return _three_seed_sweep(reference_dataset["manifest"], SDVSUM_MODEL, base)


@pytest.fixture(scope="session")
def variant3_runs(reference_dataset, tmp_path_factory):
    """Single-vector, 4-head, scaled-attention comparison runs, same seeds."""
    base = tmp_path_factory.mktemp("variant3_runs")
    return _three_seed_sweep(reference_dataset["manifest"], VARIANT3_MODEL, base)
