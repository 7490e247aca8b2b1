import numpy as np
import pytest

from holmes.data import TaskSpec, gen_synthetic
from holmes.nn import TrainConfig, init_mlp, restrict_head, train


@pytest.fixture(scope="session")
def small_world():
    """A foundation model, a victim and the task data at toy scale."""
    spec = TaskSpec(per_class=200, seed=11)
    pre = gen_synthetic(spec, "pretrain")
    task = gen_synthetic(spec, "task")
    base = train(init_mlp([32, 128, 64, 20], 11), pre,
                 TrainConfig(epochs=5, batch_size=64, base_lr=5e-3, head_lr_multiplier=1.0, seed=11))
    foundation = restrict_head(base, range(10))
    victim = train(foundation, task,
                   TrainConfig(epochs=10, batch_size=64, base_lr=1e-2, head_lr_multiplier=10.0, seed=12))
    return dict(spec=spec, task=task, foundation=foundation, victim=victim,
                substitute=gen_synthetic(spec, "substitute"),
                independent=gen_synthetic(spec, "independent"),
                rng=np.random.default_rng(0))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
