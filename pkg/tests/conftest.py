import numpy as np
import pytest

from pfalign.netcore import build_network, forward, forward_from, per_sample_loss
from pfalign.rng import make_rng

ACCEPTANCE_LINES = []


def fd_preactivation_errors(net, x, targets, h=1e-6):
    """Central differences of the summed loss w.r.t. every preactivation a_1..a_L.

    Returns the negative gradient, i.e. what a correct backward pass yields
    for ``e_l``.
    """
    cache = forward(net, x)
    out = [None]
    for l in range(1, net.depth + 1):
        a = cache.a(l)
        grad = np.zeros_like(a)
        flat = a.reshape(-1)
        g = grad.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = per_sample_loss(forward_from(net, cache, l, a.copy()), targets).sum()
            flat[k] = old - h
            down = per_sample_loss(forward_from(net, cache, l, a.copy()), targets).sum()
            flat[k] = old
            g[k] = (up - down) / (2 * h)
        out.append(-grad)
    return out


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def random_small_net(seed, conv=False, skip=False):
    """Network with widths <= 8, random geometry."""
    rng = make_rng(seed, "test-net")
    if conv:
        c_in = int(rng.integers(1, 4))
        size = int(rng.integers(5, 9))
        specs = [
            {
                "type": "conv",
                "channels": int(rng.integers(2, 5)),
                "kernel": int(rng.integers(1, 4)),
                "stride": int(rng.integers(1, 3)),
                "padding": int(rng.integers(0, 2)),
            },
            {"type": "conv", "channels": int(rng.integers(2, 5)), "kernel": 2, "stride": 1, "padding": 1},
            {"type": "dense", "units": int(rng.integers(2, 6))},
        ]
        if skip:
            ch = specs[1]["channels"]
            specs.insert(2, {"type": "conv", "channels": ch, "kernel": 3, "stride": 1,
                             "padding": 1, "skip_from": 2})
        input_shape = (c_in, size, size)
    else:
        widths = [int(w) for w in rng.integers(2, 9, size=3)]
        specs = [{"type": "dense", "units": widths[1]}, {"type": "dense", "units": widths[2]}]
        if skip:
            specs.append({"type": "dense", "units": widths[2], "skip_from": 2})
        specs.append({"type": "dense", "units": int(rng.integers(2, 6))})
        input_shape = (widths[0],)
    net = build_network(input_shape, specs, rng)
    # nonzero biases so ReLU kinks are away from 0 with probability one
    for layer in net.layers:
        layer.b[...] = rng.normal(scale=0.1, size=layer.b.shape)
    return net, rng


@pytest.fixture
def rng():
    return make_rng(12345, "test")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
