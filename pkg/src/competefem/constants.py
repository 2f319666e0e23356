"""Embedding constants, growth smallness checks, and the safeguard radius.

The Dirichlet embedding constants S_r with ||u||_r <= S_r ||grad u||_p are
estimated by projected ascent of the Rayleigh-type ratio over the finite
element space, so the raw numbers are lower bounds of the true constants.
A configurable safety factor inflates them before they enter any hypothesis
check; reports keep both numbers.  The first eigenvalue of the p-Laplacian
is estimated by the matching descent, and the two estimators are tied by
S_p = lambda^{-1/p}, which doubles as a consistency check.

When the critical Sobolev exponent is unavailable (p >= space dimension at
desk scale) a finite surrogate is used everywhere; the default is 2p.  The
whole-space constant needed by convolution certificates has no meaning in
that regime either, so the domain estimate at the surrogate exponent stands
in for it, flagged in the provenance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import FEFunction, SpaceHierarchy, prolongate
from .operators import _gradient_force, _load_vector


class ConstantLookupError(KeyError):
    """An embedding constant at a required exponent was not estimated."""


class HypothesisError(ValueError):
    """A hypothesis precondition is structurally violated."""


def critical_surrogate(p: float, n_dim: int, override: float | None = None) -> float:
    """Np/(N-p) when p < N, otherwise a finite stand-in (default 2p)."""
    if override is not None:
        if override <= p:
            raise ValueError(f"critical surrogate must exceed p, got {override} <= {p}")
        return float(override)
    if p < n_dim:
        return n_dim * p / (n_dim - p)
    return 2.0 * p


def _key(r: float) -> float:
    return round(float(r), 12)


@dataclass(frozen=True)
class SEstimate:
    raw: float
    value: float  # raw times the safety factor
    provenance: str


@dataclass(frozen=True, eq=False)
class EmbeddingConstants:
    """Estimated constants of one problem: S_r map, eigenvalue, surrogates."""

    p: float
    n_dim: int
    p_crit: float
    safety: float
    entries: dict = field(default_factory=dict)     # key(r) -> SEstimate
    lambda1p: float | None = None
    lambda_profile: tuple = ()
    s_space: float | None = None
    s_space_provenance: str = ""

    def S(self, r: float) -> float:
        try:
            return self.entries[_key(r)].value
        except KeyError:
            raise ConstantLookupError(
                f"no embedding constant estimated at exponent r = {r}"
            ) from None

    def S_raw(self, r: float) -> float:
        try:
            return self.entries[_key(r)].raw
        except KeyError:
            raise ConstantLookupError(
                f"no embedding constant estimated at exponent r = {r}"
            ) from None

    def with_entry(self, r: float, est: SEstimate) -> "EmbeddingConstants":
        entries = dict(self.entries)
        entries[_key(r)] = est
        return EmbeddingConstants(
            p=self.p, n_dim=self.n_dim, p_crit=self.p_crit, safety=self.safety,
            entries=entries, lambda1p=self.lambda1p, lambda_profile=self.lambda_profile,
            s_space=self.s_space, s_space_provenance=self.s_space_provenance,
        )

    def to_json_dict(self) -> dict:
        return {
            "p": self.p,
            "N": self.n_dim,
            "p_crit": self.p_crit,
            "safety": self.safety,
            "lambda1p": self.lambda1p,
            "lambda1p_profile": list(self.lambda_profile),
            "S": {
                repr(k): {"raw": e.raw, "value": e.value, "provenance": e.provenance}
                for k, e in sorted(self.entries.items())
            },
            "S_space": {"value": self.s_space, "provenance": self.s_space_provenance},
        }


@dataclass(frozen=True)
class EstimateResult:
    value: float
    raw: float
    per_level: tuple
    converged: bool


# ---------------------------------------------------------------------------
# Rayleigh-type optimisation over a level
# ---------------------------------------------------------------------------


def _free_force(u: FEFunction, r: float) -> np.ndarray:
    lvl = u.lvl
    return lvl.scatter_to_free(_gradient_force(u.element_gradients(), r, lvl))


def _free_value_load(u: FEFunction, r: float) -> np.ndarray:
    lvl = u.lvl
    vals = u.values_at_qp()
    integrand = np.sign(vals) * np.abs(vals) ** (r - 1.0)
    return lvl.scatter_to_free(_load_vector(integrand, lvl))


def _grad_power(u: FEFunction, p: float) -> float:
    lvl = u.lvl
    mag = np.sqrt(np.sum(u.element_gradients() ** 2, axis=-1))
    return float(np.sum(lvl.elem_measure * mag**p))


def _value_power(u: FEFunction, r: float) -> float:
    lvl = u.lvl
    return float(np.sum(lvl.qp_weights * np.abs(u.values_at_qp()) ** r))


def _sine_start(h: SpaceHierarchy, level: int) -> np.ndarray:
    lvl = h.level(level)
    if h.dim == 1:
        a, b = lvl.mesh.nodes[0], lvl.mesh.nodes[-1]
        pts = lvl.mesh.nodes[lvl.free]
        return np.sin(math.pi * (pts - a) / (b - a))
    pts = lvl.mesh.vertices[lvl.free]
    lo = lvl.mesh.vertices.min(axis=0)
    hi = lvl.mesh.vertices.max(axis=0)
    t = (pts - lo) / np.where(hi > lo, hi - lo, 1.0)
    return np.sin(math.pi * t[:, 0]) * np.sin(math.pi * t[:, 1])


def _descend_rayleigh(h, level, p, start, iters, tol):
    """Monotone projected gradient descent of ||grad u||_p^p / ||u||_p^p."""
    coeffs = np.array(start, dtype=float)
    u = h.function(level, coeffs)
    B = _value_power(u, p)
    coeffs = coeffs / B ** (1.0 / p)
    u = h.function(level, coeffs)
    A, B = _grad_power(u, p), 1.0
    value = A / B
    step = 1.0 / max(value, 1.0)
    converged = False
    for _ in range(iters):
        gA = p * _free_force(u, p)
        gB = p * _free_value_load(u, p)
        grad = (gA * B - A * gB) / B**2
        gnorm2 = float(grad @ grad)
        if gnorm2 == 0.0:
            converged = True
            break
        t = step * 2.0
        accepted = False
        for _ in range(60):
            cand = coeffs - t * grad
            cu = h.function(level, cand)
            cB = _value_power(cu, p)
            if cB > 0:
                cand = cand / cB ** (1.0 / p)
                cu = h.function(level, cand)
                cA = _grad_power(cu, p)
                if cA < value - 1e-4 * t * gnorm2:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            converged = True
            break
        improvement = (value - cA) / max(value, 1e-300)
        coeffs, u, A, B, value, step = cand, cu, cA, 1.0, cA, t
        if improvement < tol:
            converged = True
            break
    return value, coeffs, converged


def estimate_lambda1p(
    h: SpaceHierarchy,
    p: float,
    iters: int = 400,
    tol: float = 1e-12,
    level: int | None = None,
) -> EstimateResult:
    """First p-Laplacian eigenvalue by Rayleigh quotient descent.

    Each level starts from the prolongated minimiser of the previous one,
    which makes the per-level estimates nonincreasing by construction; the
    base level starts from a sine interpolant.  The result is an upper bound
    of the true eigenvalue because minimisation runs over a subspace.
    """
    if p <= 1:
        raise ValueError(f"eigenvalue exponent must satisfy p > 1, got {p}")
    top = h.n_levels if level is None else level
    per_level = []
    coeffs = None
    ok = True
    for n in range(1, top + 1):
        if h.level(n).n_free == 0:
            per_level.append(math.inf)
            continue
        if coeffs is None:
            start = _sine_start(h, n)
        else:
            start = (h.level(n).prolongation @ coeffs)
            if not np.any(start):
                start = _sine_start(h, n)
        value, coeffs, conv = _descend_rayleigh(h, n, p, start, iters, tol)
        ok = ok and conv
        per_level.append(value)
    return EstimateResult(value=per_level[-1], raw=per_level[-1],
                          per_level=tuple(per_level), converged=ok)


def _ascend_embedding(h, level, r, p, start, iters, tol):
    """Monotone projected ascent of ||u||_r with ||grad u||_p fixed to one."""
    coeffs = np.array(start, dtype=float)
    u = h.function(level, coeffs)
    D = _grad_power(u, p) ** (1.0 / p)
    coeffs = coeffs / D
    u = h.function(level, coeffs)
    value = _value_power(u, r) ** (1.0 / r)
    step = 1.0
    converged = False
    for _ in range(iters):
        N = value
        gN = N ** (1.0 - r) * _free_value_load(u, r)
        gD = _free_force(u, p)  # equals D^{1-p} * force since D = 1
        grad = gN - N * gD
        gnorm2 = float(grad @ grad)
        if gnorm2 == 0.0:
            converged = True
            break
        t = step * 2.0
        accepted = False
        for _ in range(60):
            cand = coeffs + t * grad
            cu = h.function(level, cand)
            cD = _grad_power(cu, p) ** (1.0 / p)
            if cD > 0:
                cand = cand / cD
                cu = h.function(level, cand)
                cN = _value_power(cu, r) ** (1.0 / r)
                if cN > value + 1e-4 * t * gnorm2:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            converged = True
            break
        improvement = (cN - value) / max(value, 1e-300)
        coeffs, u, value, step = cand, cu, cN, t
        if improvement < tol:
            converged = True
            break
    return value, coeffs, converged


def estimate_embedding_constant(
    h: SpaceHierarchy,
    r: float,
    p: float,
    starts: int = 8,
    iters: int = 300,
    tol: float = 1e-11,
    safety: float = 1.1,
    seed: int = 0,
    level: int | None = None,
) -> EstimateResult:
    """Estimate S_r = sup ||u||_r / ||grad u||_p over the finest level.

    Projected ascent with multiple deterministic starts (a sine interpolant,
    seeded random vectors, and the prolongated best of the coarser level).
    The raw maximum is a lower bound of the true constant; ``value`` is the
    raw number times the safety factor.
    """
    if r < 1:
        raise ValueError(f"embedding exponent must satisfy r >= 1, got {r}")
    top = h.n_levels if level is None else level
    rng = np.random.default_rng(np.random.SeedSequence((seed, int(round(r * 1e6)))))
    per_level = []
    best_coeffs = None
    ok = True
    for n in range(1, top + 1):
        lvl = h.level(n)
        if lvl.n_free == 0:
            per_level.append(0.0)
            continue
        candidates = [_sine_start(h, n)]
        if best_coeffs is not None:
            warm = h.level(n).prolongation @ best_coeffs
            if np.any(warm):
                candidates.append(warm)
        for _ in range(max(0, starts - 1)):
            candidates.append(rng.standard_normal(lvl.n_free))
        best_val, best_c = -math.inf, None
        for cand in candidates:
            if not np.any(cand):
                continue
            val, c, conv = _ascend_embedding(h, n, r, p, cand, iters, tol)
            ok = ok and conv
            if val > best_val:
                best_val, best_c = val, c
        per_level.append(best_val)
        best_coeffs = best_c
    raw = per_level[-1]
    return EstimateResult(value=safety * raw, raw=raw,
                          per_level=tuple(per_level), converged=ok)


def build_constants(
    h: SpaceHierarchy,
    p: float,
    p_crit: float,
    exponents,
    safety: float = 1.1,
    starts: int = 8,
    iters: int = 300,
    seed: int = 0,
    with_eigenvalue: bool = True,
) -> EmbeddingConstants:
    """Estimate every requested embedding constant plus the eigenvalue."""
    ec = EmbeddingConstants(p=p, n_dim=h.dim, p_crit=p_crit, safety=safety)
    lam = None
    profile = ()
    if with_eigenvalue:
        res = estimate_lambda1p(h, p)
        lam, profile = res.value, res.per_level
    entries = {}
    for r in sorted({_key(r) for r in exponents}):
        est = estimate_embedding_constant(
            h, r, p, starts=starts, iters=iters, safety=safety, seed=seed
        )
        entries[_key(r)] = SEstimate(
            raw=est.raw, value=est.value,
            provenance="projected ascent over the finest level, times safety factor",
        )
    s_space = None
    prov = ""
    if _key(p_crit) in entries:
        s_space = entries[_key(p_crit)].value
        prov = (
            "domain estimate at the critical surrogate standing in for the "
            "whole-space constant (no critical exponent when p >= N)"
        )
    return EmbeddingConstants(
        p=p, n_dim=h.dim, p_crit=p_crit, safety=safety, entries=entries,
        lambda1p=lam, lambda_profile=profile, s_space=s_space, s_space_provenance=prov,
    )


# ---------------------------------------------------------------------------
# hypothesis checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisReport:
    name: str
    value: float
    margin: float
    passed: bool
    constants: dict

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "margin": self.margin,
            "pass": self.passed,
            "constants": dict(self.constants),
        }


def _smallness_value(a1, k1, s_a, a2, k2, s_b) -> float:
    # shared expression so that specialised checks agree bitwise with the
    # generic one under constant substitution
    return a1 * k1 * s_a + a2 * k2 * s_b


def check_growth_smallness(
    a1: float,
    a2: float,
    cert,
    constants: EmbeddingConstants,
    alpha: float,
    beta: float,
) -> HypothesisReport:
    """a1 K1 S_{pc/(pc-alpha)} + a2 K2 S_{p/(p-beta)} must stay below one."""
    pc = constants.p_crit
    p = constants.p
    s_a = constants.S(pc / (pc - alpha))
    s_b = constants.S(p / (p - beta))
    value = _smallness_value(a1, cert.value_coeff, s_a, a2, cert.grad_coeff, s_b)
    return HypothesisReport(
        name="growth_smallness",
        value=value,
        margin=1.0 - value,
        passed=value < 1.0,
        constants={
            "a1": a1, "a2": a2, "K1": cert.value_coeff, "K2": cert.grad_coeff,
            "S_value_pair": s_a, "S_grad_pair": s_b, "alpha": alpha, "beta": beta,
        },
    )


def check_lift_condition(a1: float, a2: float, p: float,
                         constants: EmbeddingConstants) -> HypothesisReport:
    """Smallness for the nonhomogeneous problem via the additive lift.

    Instantiates the generic smallness with K1 = m S_{pc}^{p-1}, K2 = m,
    m = max(2^{p-2}, 1), at alpha = beta = p-1, pairing the convection parts
    with S_{pc/(pc-p+1)} and S_1.
    """
    pc = constants.p_crit
    m = max(2.0 ** (p - 2.0), 1.0)
    k1 = m * constants.S(pc) ** (p - 1.0)
    s_a = constants.S(pc / (pc - p + 1.0))
    s_b = constants.S(1.0)
    value = _smallness_value(a1, k1, s_a, a2, m, s_b)
    return HypothesisReport(
        name="lift_condition",
        value=value,
        margin=1.0 - value,
        passed=value < 1.0,
        constants={
            "a1": a1, "a2": a2, "K1": k1, "K2": m, "max_factor": m,
            "S_crit": constants.S(pc), "S_value_pair": s_a, "S_1": s_b, "p": p,
        },
    )


def check_convolution_condition(
    a1: float,
    a2: float,
    p: float,
    n_dim: int,
    kernel_l1: float,
    constants: EmbeddingConstants,
) -> HypothesisReport:
    """Smallness for the mollified problem, scaled by (N ||rho||_1)^{p-1}."""
    if not kernel_l1 > 0:
        raise HypothesisError(f"kernel L1 norm must be positive, got {kernel_l1}")
    pc = constants.p_crit
    if constants.s_space is None:
        raise ConstantLookupError("no whole-space constant surrogate available")
    factor = n_dim ** (p - 1.0) * kernel_l1 ** (p - 1.0)
    k1 = factor * constants.s_space ** (p - 1.0)
    s_a = constants.S(pc / (pc - p + 1.0))
    s_b = constants.S(1.0)
    value = _smallness_value(a1, k1, s_a, a2, factor, s_b)
    return HypothesisReport(
        name="convolution_condition",
        value=value,
        margin=1.0 - value,
        passed=value < 1.0,
        constants={
            "a1": a1, "a2": a2, "K1": k1, "K2": factor, "kernel_l1": kernel_l1,
            "S_space": constants.s_space, "S_value_pair": s_a, "S_1": s_b,
            "p": p, "N": n_dim,
        },
    )


# ---------------------------------------------------------------------------
# safeguard radius
# ---------------------------------------------------------------------------


def coercivity_radius(
    kappa: float,
    omega_measure: float,
    p: float,
    q: float,
    c0: float,
) -> float:
    """Largest root R of (1-kappa) t^{p-1} - |Omega|^{(p-q)/p} t^{q-1} - c0.

    Beyond R the operator pairing against the sphere is nonnegative, so a
    discrete solution exists inside the ball of radius R.  Root found by
    bracket expansion plus bisection, then polished; the nonnegativity of g
    past R is re-verified on a log grid.
    """
    if not kappa < 1.0:
        raise HypothesisError(
            f"growth smallness hypothesis violated: kappa = {kappa} >= 1"
        )
    if kappa < 0 or c0 < 0 or omega_measure <= 0 or not 1 < q < p:
        raise ValueError(
            f"invalid radius inputs: kappa={kappa}, |Omega|={omega_measure}, p={p}, q={q}, c0={c0}"
        )
    w = omega_measure ** ((p - q) / p)

    def g(t):
        return (1.0 - kappa) * t ** (p - 1.0) - w * t ** (q - 1.0) - c0

    def dg(t):
        return (1.0 - kappa) * (p - 1.0) * t ** (p - 2.0) - w * (q - 1.0) * t ** (q - 2.0)

    hi = 1.0
    for _ in range(400):
        if g(hi) > 0:
            break
        hi *= 2.0
    else:
        raise ArithmeticError("failed to bracket the safeguard radius from above")
    lo = hi / 2.0
    for _ in range(2000):
        if g(lo) <= 0:
            break
        lo /= 2.0
    else:
        raise ArithmeticError("failed to bracket the safeguard radius from below")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    R = 0.5 * (lo + hi)
    for _ in range(3):
        d = dg(R)
        if d <= 0:
            break
        step = g(R) / d
        if abs(step) > 0.5 * R:
            break
        R -= step
    if R < lo or abs(g(R)) > abs(g(0.5 * (lo + hi))):
        R = 0.5 * (lo + hi)
    # g must stay nonnegative past R; allow rounding noise right at R
    grid = R * np.logspace(0.0, 2.0, 60)
    vals = (1.0 - kappa) * grid ** (p - 1.0) - w * grid ** (q - 1.0) - c0
    floor = -1e-8 * max(1.0, abs(c0), (1.0 - kappa) * R ** (p - 1.0))
    if np.any(vals < floor):
        raise ArithmeticError("safeguard radius verification failed on the log grid")
    return float(R)


def compose_c0(env, sigma_dual_norm: float, cert, constants: EmbeddingConstants) -> float:
    """Constant term of the coercivity polynomial.

    Collects the convection contributions that do not scale with the leading
    power: S_r ||sigma||_{r'} plus the certificate offset paired with the
    same embedding constants as the growth terms.
    """
    pc = constants.p_crit
    p = constants.p
    c0 = constants.S(env.r) * sigma_dual_norm
    if env.a1 > 0 or cert.offset > 0:
        c0 += env.a1 * cert.offset * constants.S(pc / (pc - env.alpha))
        c0 += env.a2 * cert.offset * constants.S(p / (p - env.beta))
    return float(c0)
