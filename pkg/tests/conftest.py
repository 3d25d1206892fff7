import numpy as np
import pytest
import torch

from uniso.models import TaskData, build_corpus
from uniso.textcodec import DesignSpace, Metadata, compose_input, serialize_design, tokenize
from uniso.ynorm import normalize_task

torch.set_num_threads(1)


def make_task_data(task_id, name, n, seed, ys=None):
    rng = np.random.default_rng(seed)
    space = DesignSpace.continuous(2, -1, 1)
    meta = Metadata(name, "toy", "max")
    xs = space.sample(n, rng)
    if ys is None:
        ys = -(xs**2).sum(1)
    ys = np.asarray(ys, dtype=float)
    tokens = [tokenize(compose_input(meta, serialize_design(space, x, 3))) for x in xs]
    _, norm = normalize_task(ys) if np.ptp(ys) > 0 else (None, np.zeros(n))
    return TaskData(task_id, meta, tokens, ys, norm)


@pytest.fixture
def tiny_corpus():
    return build_corpus([make_task_data("a", "Alpha", 8, 0), make_task_data("b", "Beta", 8, 1)])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
