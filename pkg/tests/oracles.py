"""Reference computations shared by the unit and acceptance tests."""
import numpy as np

from mnariv.errors import NoSignChange
from mnariv.moments import build_or_system
from mnariv.solver import SolveOptions, fd_jacobian, solve_scalar

from conftest import make_config, random_binary_dataset

COARSE_STEP = 1e-2
FINE_STEP = 1e-4


def grid_minimiser(f, lo, hi):
    """Minimiser of f^2 on a step-1e-4 grid, found by a coarse pass then a fine one.

    Returns ``(argmin, n_sign_changes_on_coarse_grid)``.
    """
    coarse = np.arange(lo, hi + COARSE_STEP / 2, COARSE_STEP)
    vals = np.array([f(t) for t in coarse])
    changes = int(np.sum(np.sign(vals[:-1]) != np.sign(vals[1:])))
    k = int(np.argmin(vals ** 2))
    fine = np.arange(coarse[k] - COARSE_STEP, coarse[k] + COARSE_STEP + FINE_STEP / 2, FINE_STEP)
    fvals = np.array([f(t) for t in fine]) ** 2
    return float(fine[np.argmin(fvals)]), changes


def scalar_root_cases(n_cases=100, seed=2024, n_max=50):
    """Random tiny all-binary datasets with a scalar zeta equation each.

    Yields ``(solve_scalar root, grid minimiser)``.  Datasets whose equation
    has no root or several roots in the bracket are redrawn (the grid
    minimiser is then not unique); the count of redraws is returned last.
    """
    rng = np.random.default_rng(seed)
    opts = SolveOptions(bracket=(-5.0, 5.0))
    pairs, redrawn = [], 0
    while len(pairs) < n_cases:
        n = int(rng.integers(10, n_max + 1))
        data = random_binary_dataset(rng, n)
        cfg = make_config(theta=rng.normal(0, 1, 2), xi=rng.normal(0, 1, 2), outcome="1, x1", iv="1, x1")
        system = build_or_system(cfg)
        f = lambda t: float(system.mean(np.array([t]), data)[0])
        best, changes = grid_minimiser(f, *opts.bracket)
        if changes != 1:
            redrawn += 1
            continue
        try:
            root = solve_scalar(f, opts)
        except NoSignChange:
            redrawn += 1
            continue
        pairs.append((root, best))
    return pairs, redrawn


# polynomial maps with hand-derived Jacobians

POLYNOMIALS = [
    (lambda x: np.array([x[0] ** 2, x[0] * x[1]]),
     lambda x: np.array([[2 * x[0], 0.0], [x[1], x[0]]])),
    (lambda x: np.array([x[0] ** 3 - 2 * x[1], x[1] ** 2 * x[2], x[0] + x[1] + x[2]]),
     lambda x: np.array([[3 * x[0] ** 2, -2.0, 0.0], [0.0, 2 * x[1] * x[2], x[1] ** 2], [1.0, 1.0, 1.0]])),
    (lambda x: np.array([x[0] ** 4 + x[0] * x[1] ** 2]),
     lambda x: np.array([[4 * x[0] ** 3 + x[1] ** 2, 2 * x[0] * x[1]]])),
    (lambda x: np.array([5 * x[0] - 3, x[0] * x[1] * x[2] * x[3], x[3] ** 2 - x[2] ** 2]),
     lambda x: np.array([[5.0, 0, 0, 0], [x[1] * x[2] * x[3], x[0] * x[2] * x[3], x[0] * x[1] * x[3],
                                          x[0] * x[1] * x[2]], [0, 0, -2 * x[2], 2 * x[3]]])),
]


def polynomial_jacobian_errors(seed=7, points=25):
    """Worst relative error of fd_jacobian against the analytic Jacobian, per polynomial."""
    rng = np.random.default_rng(seed)
    worst = []
    for f, jac in POLYNOMIALS:
        dim = jac(np.ones(4)).shape[1]
        err = 0.0
        for _ in range(points):
            x = rng.uniform(-3, 3, dim)
            J, Jfd = jac(x), fd_jacobian(f, x)
            err = max(err, float(np.max(np.abs(Jfd - J)) / max(1.0, float(np.max(np.abs(J))))))
        worst.append(err)
    return worst
