import sys

import numpy as np
import pytest
import torch

from ampn.types import ModelConfig


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance PASS/FAIL lines where they are easy to find."""
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            results = getattr(module, "RESULTS", None)
            if results:
                terminalreporter.write_sep("=", "acceptance criteria")
                for _, _, line in results:
                    terminalreporter.write_line(line)
            return


@pytest.fixture(autouse=True)
def _single_threaded_determinism():
    # keep module tests deterministic and polite on shared CPUs
    torch.manual_seed(0)
    yield


@pytest.fixture
def desk_config() -> ModelConfig:
    return ModelConfig.desk_scale()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
