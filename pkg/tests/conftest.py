import numpy as np
import pytest


def rel_error(a, b) -> float:
    """Norm-wise relative error, robust to individual near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


def natural_crops(size: int = 128, count: int = 3) -> list[np.ndarray]:
    """Clean natural-image crops in [0, 1] from the images bundled with scikit-image."""
    from skimage import data

    sources = [
        data.astronaut()[100:100 + size, 180:180 + size],
        data.coffee()[100:100 + size, 200:200 + size],
        data.chelsea()[80:80 + size, 150:150 + size],
    ]
    return [s.astype(np.float64) / 255.0 for s in sources[:count]]


def network_fd_grads(net, loss_fn, eps: float = 1e-6) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn(net)`` with respect to every network parameter."""
    out = {}
    for name, p in net.params.items():
        g = np.zeros_like(p.data)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn(net).item()
            flat[i] = orig - eps
            fm = loss_fn(net).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        out[name] = g
    return out


def zero_network(channels: int = 3, mode="residual", hidden: int = 48):
    from tracedenoise.network import build_network

    net = build_network(channels, hidden, seed=0, mode=mode)
    for p in net.params.values():
        p.data[...] = 0.0
    return net


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
