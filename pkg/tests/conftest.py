import numpy as np
import pytest

from subspacenet.network import NetworkConfig, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_net(seed=0, d=3, h=8, blocks=2, k=4, l2=True, bias_scale=0.1):
    """Tiny network with nonzero biases so every bias path is exercised."""
    config = NetworkConfig(input_dim=d, hidden_width=h, num_blocks=blocks, output_dim=k,
                           use_l2norm_output=l2, seed=seed)
    params = init_params(config)
    rng = np.random.default_rng(seed + 1000)
    for arr in params.arrays:
        if arr.ndim == 1:
            arr[...] = rng.normal(0, bias_scale, arr.shape)
    return config, params


def unit_columns(z):
    return z / np.linalg.norm(z, axis=0)


ACCEPTANCE_CRITERIA = 10
_acceptance_lines = {}


@pytest.fixture
def acceptance():
    """``acceptance(n, passed, detail)`` records the verdict line for criterion ``n``."""
    def report(number, passed, detail):
        line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _acceptance_lines[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in str(r.nodeid)
              for reports in terminalreporter.stats.values() for r in reports
              if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_CRITERIA + 1):
        terminalreporter.write_line(
            _acceptance_lines.get(n, f"ACCEPTANCE {n:2d}: FAIL  no verdict (test errored or was not run)"))
