import numpy as np
import pytest
import torch

torch.set_num_threads(1)

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def finite_difference_check(param: torch.Tensor, loss_fn, n_samples: int, gen, eps=1e-6):
    """Compare autograd against central differences on sampled entries of ``param``.

    ``loss_fn()`` must rebuild the scalar loss from scratch. Returns the list
    of (analytic, numeric) pairs.
    """
    param.grad = None
    loss = loss_fn()
    (grad,) = torch.autograd.grad(loss, param)
    flat = param.data.view(-1)
    idx = gen.choice(flat.numel(), size=n_samples, replace=False)
    pairs = []
    with torch.no_grad():
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            pairs.append((grad.view(-1)[i].item(), (up - down) / (2 * eps)))
    return pairs
