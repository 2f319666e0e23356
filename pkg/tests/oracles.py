"""Independent oracles used by the test suite.

Everything here is deliberately decoupled from the package internals:
the eigenvalue oracle integrates the ODE and bisects, the zero-finding
oracle scans a grid, and derivative checks use plain finite differences.
"""

import numpy as np
from scipy.integrate import solve_ivp


def shooting_endpoint(lam: float, p: float) -> float:
    """u(1) for the radial system of the 1D p-Laplacian eigenproblem.

    Solves (|u'|^{p-2} u')' + lam |u|^{p-2} u = 0 with u(0) = 0, u'(0) = 1
    via the flux variable z = |u'|^{p-2} u'.
    """
    pp = p / (p - 1.0)

    def rhs(x, y):
        u, z = y
        return [np.sign(z) * np.abs(z) ** (pp - 1.0),
                -lam * np.sign(u) * np.abs(u) ** (p - 1.0)]

    sol = solve_ivp(rhs, (0.0, 1.0), [0.0, 1.0], rtol=1e-10, atol=1e-12)
    return float(sol.y[0, -1])


def lambda1_shooting(p: float) -> float:
    """First Dirichlet eigenvalue on (0, 1) by scan plus bisection."""
    lo = 1.0
    assert shooting_endpoint(lo, p) > 0
    hi = lo
    for _ in range(200):
        hi *= 1.25
        if shooting_endpoint(hi, p) < 0:
            break
        lo = hi
    else:
        raise RuntimeError("no sign change found while scanning the eigenvalue")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if shooting_endpoint(mid, p) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def random_monotone_map(rng: np.random.Generator, dim: int, R: float):
    """Monotone map A v + c ||v||^2 v - b with its unique zero inside the ball.

    Eigenvalues of A live in [0.5, 2] and ||b|| <= 0.4 * lambda_min * R, so
    <F(v), v> >= lambda_min R^2 + c R^4 - ||b|| R > 0 on the sphere and the
    zero is unique by strict monotonicity.
    """
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = rng.uniform(0.5, 2.0, size=dim)
    A = Q @ np.diag(eigs) @ Q.T
    lam_min = eigs.min()
    b = rng.standard_normal(dim)
    b *= 0.4 * lam_min * R / max(np.linalg.norm(b), 1e-30)
    c = 0.1

    def F(v):
        v = np.atleast_2d(v)
        out = v @ A.T + c * np.sum(v**2, axis=1, keepdims=True) * v - b
        return out[0] if out.shape[0] == 1 else out

    return F, A, b, c


def grid_search_zero(F, R: float, dim: int, step: float = 1e-3) -> np.ndarray:
    """Grid argmin of ||F||_inf over the cube [-R, R]^dim.

    Two dimensions are scanned exhaustively at the requested step; three
    dimensions use a coarse pass at ten times the step followed by an
    exhaustive pass at the requested step around the coarse minimiser.
    """
    def batch_eval(points):
        vals = F(points)
        return np.max(np.abs(vals), axis=1)

    if dim == 2:
        axis = np.arange(-R, R + step / 2, step)
        best_val, best_pt = np.inf, None
        # scan row blocks to bound memory
        block = 256
        for i0 in range(0, len(axis), block):
            xs = axis[i0:i0 + block]
            X, Y = np.meshgrid(xs, axis, indexing="ij")
            pts = np.column_stack([X.ravel(), Y.ravel()])
            vals = batch_eval(pts)
            j = int(np.argmin(vals))
            if vals[j] < best_val:
                best_val, best_pt = vals[j], pts[j]
        return best_pt
    if dim == 3:
        coarse = 10 * step
        axis = np.arange(-R, R + coarse / 2, coarse)
        best_val, best_pt = np.inf, None
        for x in axis:
            Y, Z = np.meshgrid(axis, axis, indexing="ij")
            pts = np.column_stack([np.full(Y.size, x), Y.ravel(), Z.ravel()])
            vals = batch_eval(pts)
            j = int(np.argmin(vals))
            if vals[j] < best_val:
                best_val, best_pt = vals[j], pts[j]
        lo = best_pt - 3 * coarse
        hi = best_pt + 3 * coarse
        axes = [np.arange(lo[d], hi[d] + step / 2, step) for d in range(3)]
        best_val, fine_pt = np.inf, best_pt
        for x in axes[0]:
            Y, Z = np.meshgrid(axes[1], axes[2], indexing="ij")
            pts = np.column_stack([np.full(Y.size, x), Y.ravel(), Z.ravel()])
            vals = batch_eval(pts)
            j = int(np.argmin(vals))
            if vals[j] < best_val:
                best_val, fine_pt = vals[j], pts[j]
        return fine_pt
    raise ValueError(f"grid search oracle supports dims 2 and 3, got {dim}")
