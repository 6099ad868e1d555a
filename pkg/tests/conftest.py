import numpy as np
import pytest
from hypothesis import settings

from seqcore import Dataset, GmmModel, LassoModel, LogisticModel, RidgeModel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def linear_data(n=40, d=3, seed=0, binary=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if binary:
        y = (rng.random(n) < 0.5).astype(float)
    else:
        y = X @ rng.uniform(-2, 2, d) + 0.3 * rng.standard_normal(n)
    return Dataset(X, y)


def gmm_data(n=60, D=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, D)) + rng.integers(0, 2, size=(n, 1)) * 4.0
    return Dataset(X, np.zeros(n))


def random_beta(model, ds, rng, scale=1.0):
    """A valid random hypothesis for any model."""
    if isinstance(model, GmmModel):
        k, D = model.k, model.D
        omega = rng.dirichlet(np.ones(k))
        mu = rng.standard_normal((k, D)) * 2
        A = rng.standard_normal((k, D, D)) * 0.3
        prec = np.eye(D)[None] * rng.uniform(0.5, 1.5, (k, 1, 1)) + A @ np.transpose(A, (0, 2, 1))
        return model.pack(omega, mu, model.clamp_precision(prec))
    return scale * rng.standard_normal(model.dim(ds))


MODELS = {
    "ridge": (lambda: RidgeModel(0.01), lambda s: linear_data(seed=s)),
    "lasso": (lambda: LassoModel(0.1, 1.0), lambda s: linear_data(seed=s)),
    "logistic": (lambda: LogisticModel(0.01), lambda s: linear_data(seed=s, binary=True)),
    "gmm": (lambda: GmmModel(k=2, D=2), lambda s: gmm_data(seed=s)),
}


@pytest.fixture(params=sorted(MODELS))
def model_and_data(request):
    mk, dk = MODELS[request.param]
    return mk(), dk(0)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "RESULTS", {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
