import copy
import os
from pathlib import Path

import pytest
import torch

from leaps.zoo.registry import get_model, toy_dataset

torch.set_num_threads(int(os.environ.get("LEAPS_TEST_THREADS", "1")))


@pytest.fixture(scope="session")
def zoo_dir(request) -> Path:
    """Trained toy models are cached across test sessions (training is deterministic)."""
    override = os.environ.get("LEAPS_TEST_ZOO")
    return Path(override) if override else Path(request.config.cache.mkdir("leaps_zoo"))


@pytest.fixture(scope="session")
def dataset():
    return toy_dataset()


@pytest.fixture(scope="session")
def conv_model(zoo_dir):
    return get_model("toy_conv", zoo_dir)


@pytest.fixture(scope="session")
def conv_verifier(zoo_dir):
    return get_model("toy_conv_b", zoo_dir)


@pytest.fixture(scope="session")
def vit_model(zoo_dir):
    return get_model("toy_vit", zoo_dir)


def double(model):
    """A float64 copy of a frozen model, for finite-difference checks."""
    return copy.deepcopy(model).double()


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        assert ok, line
    return record
