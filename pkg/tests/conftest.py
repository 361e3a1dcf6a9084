import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from scenforecast.config import DataConfig, ExperimentConfig, ModelConfig, TrainConfig  # noqa: E402
from scenforecast.pipeline import build_dataset  # noqa: E402
from scenforecast.state import build_state  # noqa: E402

# criterion number -> list of (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}
N_CRITERIA = 9


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))


def tiny_config(**train) -> ExperimentConfig:
    t = dict(n_epochs=3, batch_size=4, n_d=2, n_f=2, n_n=1, validate_every=2, checkpoint_every=2,
             val_n_f=2, val_n_n=1, seed=0)
    t.update(train)
    return ExperimentConfig(
        DataConfig(days=12, n_t=16, n_known=8, stride=4, seed=3),
        ModelConfig(n_m=8, n_heads=2, n_enc=2, n_dec=1, d_ff=16, d_z=4, style_hidden=8, d_channels=(4, 8)),
        TrainConfig(**t),
    )


@pytest.fixture(scope="session")
def tiny():
    cfg = tiny_config()
    ds = build_dataset(cfg.data, seed=cfg.train.seed)
    return cfg, ds


@pytest.fixture
def tiny_state(tiny):
    cfg, ds = tiny
    return build_state(cfg, ds.n_info)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = ACCEPTANCE.get(n)
        if not parts:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
            continue
        ok = all(p for p, _ in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  " + "; ".join(d for _, d in parts))
