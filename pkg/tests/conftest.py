import pytest

from synthloop.corpus import save_corpus
from synthloop.engine import RunConfig
from synthloop.modelio import make_sim_corpus


@pytest.fixture(scope="session")
def sim_dataset(tmp_path_factory):
    """Seed/validation/test corpora minted from the shared simulated world."""
    root = tmp_path_factory.mktemp("simdata")
    save_corpus(make_sim_corpus(200, seed=7, role="seed"), root / "seed.jsonl")
    save_corpus(make_sim_corpus(60, seed=8, role="validation", id_prefix="val"), root / "val.jsonl")
    save_corpus(make_sim_corpus(100, seed=9, role="test", id_prefix="test"), root / "test.jsonl")
    return root


def make_run_config(sim_dataset, output_dir, scorer="loss_self", strategy="argmax",
                    iterations=3, batch=50, seeds=(1, 2, 3), label=None, **extra):
    data = {
        "run": {
            "iterations": iterations,
            "batch": batch,
            "scorer": scorer,
            "replicate_seeds": list(seeds),
            "output_dir": str(output_dir),
            "label": label or f"{scorer}-{strategy}",
            **extra.pop("run", {}),
        },
        "selection": {"strategy": strategy, "direction": "high", **extra.pop("selection", {})},
        "paths": {
            "seed": str(sim_dataset / "seed.jsonl"),
            "validation": str(sim_dataset / "val.jsonl"),
            "test": str(sim_dataset / "test.jsonl"),
        },
        "sim": {"seed": 7, **extra.pop("sim", {})},
        "finetune": {"epochs": 2, **extra.pop("finetune", {})},
    }
    data.update(extra)
    return RunConfig.from_dict(data)
