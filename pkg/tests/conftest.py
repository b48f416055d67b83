import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from vis2ir.data import synthetic_dataset  # noqa: E402
from vis2ir.model import DiscriminatorSpec, GeneratorSpec  # noqa: E402
from vis2ir.training import TrainConfig  # noqa: E402


@pytest.fixture
def tiny_gen_spec():
    return GeneratorSpec(3, 1, base_width=8, g1_downsamples=2, g1_res_blocks=1, g2_res_blocks=1, enhancer_count=1)


@pytest.fixture
def tiny_disc_spec():
    return DiscriminatorSpec(input_channels=4, n_scales=3, conv_layers=3, base_width=8)


@pytest.fixture
def tiny_config():
    return TrainConfig(stage1_steps=2, joint_steps=2, batch_size=2, seed=3, train_resolution=(32, 64))


@pytest.fixture(scope="session")
def synth8():
    return synthetic_dataset(8, seed=1, size=(32, 64))


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


# one summary line per acceptance criterion
_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.outcome != "passed":
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        status = "PASS" if _acceptance[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture(scope="session")
def desk_run():
    """One training run with the bundled desk config, shared across tests."""
    import time

    from vis2ir.cli import build_dataset
    from vis2ir.config import default_config_path, load_config
    from vis2ir.training import run_schedule

    cfg = load_config(default_config_path())
    dataset = build_dataset(cfg)
    reports = []
    t0 = time.perf_counter()
    trainer = run_schedule(cfg.train, dataset, cfg.generator, cfg.discriminator,
                           callback=lambda t, r: reports.append((t.step, r)))
    return {"cfg": cfg, "dataset": dataset, "trainer": trainer, "reports": reports,
            "seconds": time.perf_counter() - t0}
