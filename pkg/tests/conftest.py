import numpy as np
import pytest

from elstmd._jit import HAVE_NUMBA
from elstmd.graph_store import SampleWindow
from elstmd.model import ModelConfig, init_model

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


def random_window(n, N, seed=0, density=0.3, t=None):
    rng = np.random.default_rng(seed)
    adj = (rng.random((N + 1, n, n)) < density).astype(np.uint8)
    for a in adj:
        np.fill_diagonal(a, 0)
    return SampleWindow(inputs=adj[:N], target=adj[N], t=N if t is None else t)


def toy_config(n=6, N=3, enc=(4,), lstm=(5,), dec=None):
    return ModelConfig(n=n, window_len=N, encoder_dims=list(enc), lstm_dims=list(lstm),
                       decoder_dims=list(dec) if dec else [n])


def perturb(params, seed, scale=0.3):
    """Nonzero biases so every bias gradient is exercised."""
    rng = np.random.default_rng(seed)
    for name, arr in params.named_arrays().items():
        if ".b" in name:
            arr += scale * rng.standard_normal(arr.shape)
    return params


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def toy():
    cfg = toy_config()
    return cfg, perturb(init_model(cfg, seed=3), 3), random_window(6, 3, seed=4)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
