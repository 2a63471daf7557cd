import numpy as np
import pytest

from latentgraph._alloc import tune_allocator

tune_allocator()

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def max_rel_err(a, b, floor=1e-6):
    """max |a - b| / max(|a|, |b|, floor) elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def fd_check(loss_fn, tensors, rng, n_coords=6, h=1e-5, floor=1e-6):
    """Compare reverse-mode gradients with central differences.

    ``loss_fn()`` rebuilds the scalar loss from the current values of
    ``tensors``.  Up to ``n_coords`` random entries of each tensor are probed.
    Returns the worst relative error.
    """
    from latentgraph import tensor as T

    for t in tensors:
        t.grad = None
    T.backward(loss_fn())
    analytic = [np.array(t.grad) if t.grad is not None else np.zeros(t.shape) for t in tensors]
    worst = 0.0
    with T.no_grad():
        for t, g in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
                worst = max(worst, max_rel_err(g.reshape(-1)[i], (fp - fm) / (2 * h), floor))
    for t in tensors:
        t.grad = None
    return worst
