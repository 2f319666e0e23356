"""Assembly for the competing operator -Lap_p + Lap_q and convection terms.

The differential part is evaluated exactly on P1 spaces (gradients are
constant per element).  The right-hand side f(x, s, xi) comes from a finite
catalog; every entry carries the growth envelope it claims to satisfy, so
the envelope can be checked numerically on samples.  Custom evaluators can
be supplied by constructing :class:`ConvectionTerm` directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .discretization import (
    FEFunction,
    LevelMismatchError,
    QuadratureSamples,
    grad_norm_p,
    lebesgue_norm,
    sample,
)


def holder_conjugate(r: float) -> float:
    """r' = r/(r-1); infinity for r = 1."""
    if r == 1:
        return np.inf
    return r / (r - 1.0)


# ---------------------------------------------------------------------------
# sigma weights (the integrable part of the growth envelope)
# ---------------------------------------------------------------------------


def _x_coord(x: np.ndarray) -> np.ndarray:
    """First spatial coordinate; accepts (..., dim) point arrays or plain x."""
    x = np.asarray(x, dtype=float)
    if x.ndim > 1 and x.shape[-1] in (1, 2):
        return x[..., 0]
    return x


@dataclass(frozen=True)
class SigmaWeight:
    """Nonnegative weight function with a closed form or nodal samples."""

    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        first = _x_coord(x)
        if self.kind == "zero":
            return np.zeros_like(first)
        if self.kind == "constant":
            return np.full_like(first, float(self.params["c"]))
        if self.kind == "manufactured_abs":
            return np.abs(4.0 * np.abs(1.0 - 2.0 * first) - 2.0)
        if self.kind == "manufactured_plus":
            return 4.0 * np.abs(1.0 - 2.0 * first) + 2.0
        if self.kind == "nodal":
            xs = np.asarray(self.params["x"], dtype=float)
            vals = np.asarray(self.params["values"], dtype=float)
            return np.interp(first, xs, vals)
        raise KeyError(f"unknown sigma weight kind {self.kind!r}")

    def dual_norm(self, samples: QuadratureSamples, r: float) -> float:
        """||sigma||_{r'} by quadrature; sup over points when r = 1."""
        vals = self(samples.points)
        rp = holder_conjugate(r)
        if np.isinf(rp):
            return float(np.max(np.abs(vals))) if vals.size else 0.0
        return float(np.sum(samples.weights * np.abs(vals) ** rp) ** (1.0 / rp))


SIGMA_KINDS = ("zero", "constant", "manufactured_abs", "manufactured_plus", "nodal")


# ---------------------------------------------------------------------------
# growth envelope |f| <= sigma(x) + a1 |s|^alpha + a2 |xi|^beta
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthEnvelope:
    a1: float
    a2: float
    alpha: float
    beta: float
    r: float
    sigma: SigmaWeight

    def __call__(self, x, s, xi) -> np.ndarray:
        mag = np.sqrt(np.sum(np.atleast_1d(np.asarray(xi, dtype=float)) ** 2, axis=-1)) \
            if np.asarray(xi).ndim > np.asarray(s).ndim else np.abs(np.asarray(xi, dtype=float))
        return (
            self.sigma(x)
            + self.a1 * np.abs(np.asarray(s, dtype=float)) ** self.alpha
            + self.a2 * mag**self.beta
        )

    def validate(self, p: float, p_crit: float) -> None:
        """Check the admissible parameter ranges relative to (p, p_crit)."""
        if self.a1 < 0 or self.a2 < 0:
            raise ValueError(f"envelope coefficients must be >= 0, got a1={self.a1}, a2={self.a2}")
        if not 0 < self.alpha < p_crit - 1:
            raise ValueError(
                f"alpha={self.alpha} outside the open interval (0, p_crit - 1) = (0, {p_crit - 1})"
            )
        beta_sup = p / holder_conjugate(p_crit)
        if not 0 < self.beta < beta_sup:
            raise ValueError(
                f"beta={self.beta} outside the open interval (0, p/p_crit') = (0, {beta_sup})"
            )
        if not 1 <= self.r < p_crit:
            raise ValueError(
                f"r={self.r} outside the half-open interval [1, p_crit) = [1, {p_crit})"
            )


# ---------------------------------------------------------------------------
# convection terms f(x, s, xi)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form solution a manufactured right-hand side was built for."""

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    p: float
    q: float


@dataclass(frozen=True, eq=False)
class ConvectionTerm:
    """Right-hand side evaluator with growth metadata.

    ``fn(x, s, xi)`` must accept broadcastable arrays; ``xi`` has a trailing
    space dimension in 2D and is scalar-shaped in 1D.  ``d_s``/``d_xi`` are
    the partial derivatives used by Newton when the intrinsic operator is
    local; leave them None to force a chord (frozen right-hand side) rule.
    """

    kind: str
    params: dict
    envelope: GrowthEnvelope
    fn: Callable
    d_s: Optional[Callable] = None
    d_xi: Optional[Callable] = None
    exact: Optional[ExactSolution] = None
    guess_profile: Optional[Callable] = None
    envelope_is_exact: bool = True

    def __call__(self, x, s, xi):
        return self.fn(x, s, xi)


def _grad_mag(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim > 1 and xi.shape[-1] == 2:
        return np.sqrt(np.sum(xi**2, axis=-1))
    return np.abs(xi)


def _manufactured_value(x):
    return 4.0 * np.abs(1.0 - 2.0 * _x_coord(x)) - 2.0


_MANUFACTURED_EXACT = ExactSolution(
    value=lambda x: _x_coord(x) * (1.0 - _x_coord(x)),
    gradient=lambda x: 1.0 - 2.0 * _x_coord(x),
    p=3.0,
    q=2.0,
)


def convection_from_catalog(kind: str, params: dict | None = None) -> ConvectionTerm:
    """Build a catalog right-hand side together with its default envelope."""
    params = dict(params or {})

    def envelope(a1=0.0, a2=0.0, alpha=1.0, beta=1.0, r=2.0, sigma=SigmaWeight("zero")):
        return GrowthEnvelope(a1=a1, a2=a2, alpha=alpha, beta=beta, r=r, sigma=sigma)

    if kind == "zero":
        return ConvectionTerm(
            kind, params, envelope(),
            fn=lambda x, s, xi: np.zeros_like(np.asarray(s, dtype=float)),
            d_s=lambda x, s, xi: np.zeros_like(np.asarray(s, dtype=float)),
            d_xi=lambda x, s, xi: np.zeros_like(np.asarray(xi, dtype=float)),
        )

    if kind == "constant":
        c = float(params.get("c", 1.0))
        return ConvectionTerm(
            kind, params,
            envelope(sigma=SigmaWeight("constant", {"c": abs(c)})),
            fn=lambda x, s, xi: np.full(np.broadcast(_x_coord(x), s).shape, c),
            d_s=lambda x, s, xi: np.zeros_like(np.asarray(s, dtype=float)),
            d_xi=lambda x, s, xi: np.zeros_like(np.asarray(xi, dtype=float)),
        )

    if kind == "sigma_only":
        sigma = SigmaWeight(params.get("sigma_kind", "constant"),
                            params.get("sigma_params", {"c": 1.0}))
        r = float(params.get("r", 2.0))
        return ConvectionTerm(
            kind, params, envelope(r=r, sigma=sigma),
            fn=lambda x, s, xi: sigma(x) * np.ones(np.broadcast(_x_coord(x), s).shape),
            d_s=lambda x, s, xi: np.zeros_like(np.asarray(s, dtype=float)),
            d_xi=lambda x, s, xi: np.zeros_like(np.asarray(xi, dtype=float)),
        )

    if kind == "signed_power":
        a1 = float(params.get("a1", 1.0))
        alpha = float(params.get("alpha", 1.0))
        # below alpha = 1 the derivative blows up at s = 0, so leave it to
        # the chord rule instead of feeding Newton an unbounded coefficient
        d_s = (lambda x, s, xi: a1 * alpha * np.abs(s) ** (alpha - 1.0)) \
            if alpha >= 1.0 else None
        return ConvectionTerm(
            kind, params, envelope(a1=a1, alpha=alpha),
            fn=lambda x, s, xi: a1 * np.sign(s) * np.abs(s) ** alpha,
            d_s=d_s,
            d_xi=lambda x, s, xi: np.zeros_like(np.asarray(xi, dtype=float)),
        )

    if kind == "gradient_power":
        a2 = float(params.get("a2", 1.0))
        beta = float(params.get("beta", 1.0))
        signed = bool(params.get("signed", False))

        def _first_component(xi, s):
            xi = np.asarray(xi, dtype=float)
            return xi[..., 0] if xi.ndim > np.asarray(s).ndim else xi

        def fn(x, s, xi):
            out = a2 * _grad_mag(xi) ** beta
            if signed:
                out = out * np.sign(_first_component(xi, s))
            return out

        def d_xi(x, s, xi):
            # sign(xi_1) is piecewise constant, so it passes through a.e.
            xi = np.asarray(xi, dtype=float)
            mag = np.maximum(_grad_mag(xi), 1e-300)
            scal = a2 * beta * mag ** (beta - 2.0)
            if signed:
                scal = scal * np.sign(_first_component(xi, s))
            return scal[..., None] * xi if xi.ndim > np.asarray(s).ndim else scal * xi

        return ConvectionTerm(
            kind, params, envelope(a2=a2, beta=beta),
            fn=fn,
            d_s=lambda x, s, xi: np.zeros_like(np.asarray(s, dtype=float)),
            d_xi=d_xi if beta >= 1.0 else None,
        )

    if kind == "manufactured_p3q2":
        return ConvectionTerm(
            kind, params,
            envelope(r=2.0, sigma=SigmaWeight("manufactured_abs")),
            fn=lambda x, s, xi: _manufactured_value(x) * np.ones(np.broadcast(_x_coord(x), s).shape),
            d_s=lambda x, s, xi: np.zeros_like(np.asarray(s, dtype=float)),
            d_xi=lambda x, s, xi: np.zeros_like(np.asarray(xi, dtype=float)),
            exact=_MANUFACTURED_EXACT,
            guess_profile=_MANUFACTURED_EXACT.value,
        )

    if kind == "manufactured_plus_power":
        a1 = float(params.get("a1", 0.0))
        alpha = float(params.get("alpha", 1.0))
        a2 = float(params.get("a2", 0.0))
        beta = float(params.get("beta", 1.0))

        def fn(x, s, xi):
            out = _manufactured_value(x) * np.ones(np.broadcast(_x_coord(x), s).shape)
            if a1:
                out = out + a1 * np.sign(s) * np.abs(s) ** alpha
            if a2:
                out = out + a2 * _grad_mag(xi) ** beta
            return out

        def d_s(x, s, xi):
            if not a1:
                return np.zeros_like(np.asarray(s, dtype=float))
            return a1 * alpha * np.abs(s) ** (alpha - 1.0)

        def d_xi(x, s, xi):
            xi = np.asarray(xi, dtype=float)
            if not a2:
                return np.zeros_like(xi)
            mag = np.maximum(_grad_mag(xi), 1e-300)
            scal = a2 * beta * mag ** (beta - 2.0)
            return scal[..., None] * xi if xi.ndim > np.asarray(s).ndim else scal * xi

        # no closed-form solution once the power terms act, but the unperturbed
        # parabola still selects the right branch as an initial profile; the
        # power derivatives are dropped (chord rule) when unbounded near zero
        return ConvectionTerm(
            kind, params,
            envelope(a1=a1, a2=a2, alpha=alpha, beta=beta, r=2.0,
                     sigma=SigmaWeight("manufactured_abs")),
            fn=fn,
            d_s=d_s if (not a1 or alpha >= 1.0) else None,
            d_xi=d_xi if (not a2 or beta >= 1.0) else None,
            guess_profile=_MANUFACTURED_EXACT.value,
        )

    raise KeyError(
        f"unknown convection kind {kind!r}; catalog: zero, constant, sigma_only, "
        "signed_power, gradient_power, manufactured_p3q2, manufactured_plus_power"
    )


CONVECTION_KINDS = (
    "zero",
    "constant",
    "sigma_only",
    "signed_power",
    "gradient_power",
    "manufactured_p3q2",
    "manufactured_plus_power",
)


# ---------------------------------------------------------------------------
# pairings and assembly
# ---------------------------------------------------------------------------


def _combined_gradients(u: FEFunction, lift) -> np.ndarray:
    g = u.element_gradients()
    if lift is not None:
        if getattr(lift, "level", None) != u.level:
            raise LevelMismatchError(
                f"lift on level {getattr(lift, 'level', None)} does not match u on level {u.level}"
            )
        g = g + lift.element_gradients()
    return g


def p_laplace_pairing(u: FEFunction, v: FEFunction, r: float, lift=None) -> float:
    """<-Lap_r (u + lift), v> evaluated exactly on P1 elements."""
    if u.level != v.level:
        raise LevelMismatchError(f"levels differ: {u.level} vs {v.level}")
    g = _combined_gradients(u, lift)
    gv = v.element_gradients()
    mag = np.sqrt(np.sum(g**2, axis=-1))
    if r == 2:
        coef = np.ones_like(mag)
    else:
        coef = np.where(mag > 0, mag ** (r - 2.0), 0.0)
    return float(np.sum(u.lvl.elem_measure * coef * np.sum(g * gv, axis=-1)))


def competing_pairing(u: FEFunction, v: FEFunction, p: float, q: float, lift=None) -> float:
    """<-Lap_p w + Lap_q w, v> with w = u + lift (lift defaults to zero)."""
    if not 1 < q < p:
        raise ValueError(f"exponents must satisfy 1 < q < p, got q={q}, p={p}")
    return p_laplace_pairing(u, v, p, lift) - p_laplace_pairing(u, v, q, lift)


@dataclass(frozen=True, eq=False)
class ResidualVector:
    """Galerkin residual against every free basis function of one level."""

    level: int
    values: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _check_samples(u: FEFunction, T_image: QuadratureSamples) -> None:
    lvl = u.lvl
    if T_image.level != u.level or T_image.values.shape != lvl.qp_weights.shape:
        raise LevelMismatchError(
            f"samples on level {T_image.level} with shape {T_image.values.shape} do not "
            f"match level {u.level} quadrature {lvl.qp_weights.shape}"
        )


def _f_at_samples(f: ConvectionTerm, lvl, T_image: QuadratureSamples) -> np.ndarray:
    x = lvl.qp_points[..., 0] if lvl.mesh.dim == 1 else lvl.qp_points
    xi = T_image.gradients[..., 0] if lvl.mesh.dim == 1 else T_image.gradients
    return np.asarray(f(x, T_image.values, xi), dtype=float)


def _gradient_force(u_grads: np.ndarray, r: float, lvl) -> np.ndarray:
    """Nodal assembly of sum_e |g|^{r-2} g . grad(phi_i) |e| over all nodes."""
    mag = np.sqrt(np.sum(u_grads**2, axis=-1))
    if r == 2:
        coef = np.ones_like(mag)
    else:
        coef = np.where(mag > 0, mag ** (r - 2.0), 0.0)
    contrib = np.einsum("e,ekd,ed->ek", lvl.elem_measure * coef, lvl.grad_basis, u_grads)
    out = np.zeros(lvl.mesh.n_nodes)
    np.add.at(out, lvl.elem_nodes, contrib)
    return out


def _load_vector(values_at_qp: np.ndarray, lvl) -> np.ndarray:
    """Nodal assembly of int values * phi_i dx."""
    contrib = np.einsum("eq,qk->ek", lvl.qp_weights * values_at_qp, lvl.basis_at_qp)
    out = np.zeros(lvl.mesh.n_nodes)
    np.add.at(out, lvl.elem_nodes, contrib)
    return out


def assemble_residual(
    u: FEFunction,
    T_image: QuadratureSamples,
    f: ConvectionTerm,
    p: float,
    q: float,
    lift=None,
) -> ResidualVector:
    """Residual of the Galerkin equation at u, one entry per free hat.

    Component i is <-Lap_p w + Lap_q w, phi_i> - int f(x, T(u), grad T(u))
    phi_i dx with w = u + lift.  The differential part is exact; the load
    uses the level's quadrature and the supplied samples of T(u).
    """
    if not 1 < q < p:
        raise ValueError(f"exponents must satisfy 1 < q < p, got q={q}, p={p}")
    _check_samples(u, T_image)
    lvl = u.lvl
    g = _combined_gradients(u, lift)
    nodal = _gradient_force(g, p, lvl) - _gradient_force(g, q, lvl)
    nodal -= _load_vector(_f_at_samples(f, lvl, T_image), lvl)
    return ResidualVector(level=u.level, values=lvl.scatter_to_free(nodal))


def _p_part_jacobian(g: np.ndarray, r: float, eps: float, lvl) -> sp.csr_matrix:
    """Derivative of the r-Laplacian force, regularised by eps when needed.

    Uses the coefficient (|g|^2 + eps^2)^{(r-2)/2}; the rank-one term carries
    (r-2)(|g|^2 + eps^2)^{(r-4)/2} g g^T.
    """
    if r < 2 and eps <= 0:
        raise ValueError(
            f"exponent {r} < 2 needs a positive gradient regularisation eps_reg"
        )
    m2 = np.sum(g**2, axis=-1) + eps**2
    if r == 2:
        c0 = np.ones_like(m2)
        c1 = np.zeros_like(m2)
    else:
        c0 = m2 ** ((r - 2.0) / 2.0)
        with np.errstate(divide="ignore"):
            c1 = np.where(m2 > 0, (r - 2.0) * m2 ** ((r - 4.0) / 2.0), 0.0)
    nv = lvl.elem_nodes.shape[1]
    gdphi = np.einsum("ekd,ed->ek", lvl.grad_basis, g)  # (n_el, nv)
    block = (
        c1[:, None, None] * gdphi[:, :, None] * gdphi[:, None, :]
        + c0[:, None, None] * np.einsum("ekd,eld->ekl", lvl.grad_basis, lvl.grad_basis)
    ) * lvl.elem_measure[:, None, None]
    rows = np.repeat(lvl.elem_nodes, nv, axis=1).ravel()
    cols = np.tile(lvl.elem_nodes, (1, nv)).ravel()
    n = lvl.mesh.n_nodes
    return sp.coo_matrix((block.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _f_part_jacobian(f: ConvectionTerm, T_image: QuadratureSamples, lvl) -> sp.csr_matrix:
    """Derivative of the load when f is differentiated through its arguments."""
    x = lvl.qp_points[..., 0] if lvl.mesh.dim == 1 else lvl.qp_points
    xi = T_image.gradients[..., 0] if lvl.mesh.dim == 1 else T_image.gradients
    n = lvl.mesh.n_nodes
    nv = lvl.elem_nodes.shape[1]
    J = sp.csr_matrix((n, n))
    if f.d_s is not None:
        fs = np.asarray(f.d_s(x, T_image.values, xi), dtype=float)
        block = np.einsum("eq,qk,ql->ekl", lvl.qp_weights * fs, lvl.basis_at_qp, lvl.basis_at_qp)
        rows = np.repeat(lvl.elem_nodes, nv, axis=1).ravel()
        cols = np.tile(lvl.elem_nodes, (1, nv)).ravel()
        J = J + sp.coo_matrix((block.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    if f.d_xi is not None:
        fxi = np.asarray(f.d_xi(x, T_image.values, xi), dtype=float)
        if lvl.mesh.dim == 1:
            fxi = fxi[..., None]
        # columns see grad(phi_l), constant per element; rows see phi_k at qp
        block = np.einsum("eqd,qk,eld->ekl", lvl.qp_weights[..., None] * fxi,
                          lvl.basis_at_qp, lvl.grad_basis)
        rows = np.repeat(lvl.elem_nodes, nv, axis=1).ravel()
        cols = np.tile(lvl.elem_nodes, (1, nv)).ravel()
        J = J + sp.coo_matrix((block.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return J


def assemble_jacobian(
    u: FEFunction,
    T_image: QuadratureSamples,
    f: ConvectionTerm,
    p: float,
    q: float,
    eps_reg: float = 0.0,
    lift=None,
    differentiate_f: bool = True,
) -> sp.csr_matrix:
    """Directional derivative of :func:`assemble_residual` at u.

    The residual itself is never regularised; ``eps_reg`` only smooths the
    Jacobian coefficient near vanishing gradients and is mandatory when an
    exponent is below two.  With ``differentiate_f`` false the load is
    frozen (chord rule), which is what nonlocal intrinsic operators get.
    """
    if not 1 < q < p:
        raise ValueError(f"exponents must satisfy 1 < q < p, got q={q}, p={p}")
    _check_samples(u, T_image)
    lvl = u.lvl
    g = _combined_gradients(u, lift)
    J = _p_part_jacobian(g, p, eps_reg, lvl) - _p_part_jacobian(g, q, eps_reg, lvl)
    if differentiate_f and (f.d_s is not None or f.d_xi is not None):
        J = J - _f_part_jacobian(f, T_image, lvl)
    free = lvl.free
    return J[free][:, free].tocsr()


# ---------------------------------------------------------------------------
# growth checks and the convection functional bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthCheckReport:
    worst_margin: float
    worst_sample: tuple
    n_samples: int

    @property
    def holds(self) -> bool:
        return self.worst_margin <= 0.0


def growth_envelope_check(f: ConvectionTerm, samples) -> GrowthCheckReport:
    """Worst |f| - envelope over a sample set; nonpositive means it holds."""
    worst = -np.inf
    arg = None
    n = 0
    for x, s, xi in samples:
        margin = float(np.abs(f(x, s, xi)) - f.envelope(x, s, xi))
        n += 1
        if margin > worst:
            worst, arg = margin, (x, s, xi)
    return GrowthCheckReport(worst_margin=worst, worst_sample=arg, n_samples=n)


def convection_functional_bound(
    u: FEFunction,
    v: FEFunction,
    T_image: QuadratureSamples,
    env: GrowthEnvelope,
    p: float,
    p_crit: float,
) -> float:
    """Upper bound for |int f(x, T(u), grad T(u)) v dx| from the envelope.

    Combines the Hoelder pairs (r, r'), (p_crit/alpha-type, its conjugate)
    and (p/beta-type, its conjugate) applied to the three envelope parts.
    """
    if u.level != v.level:
        raise LevelMismatchError(f"levels differ: {u.level} vs {v.level}")
    su = T_image
    bound = env.sigma.dual_norm(su, env.r) * lebesgue_norm(v, env.r)
    if env.a1 > 0:
        bound += (
            env.a1
            * su.value_norm(p_crit) ** env.alpha
            * lebesgue_norm(v, p_crit / (p_crit - env.alpha))
        )
    if env.a2 > 0:
        bound += (
            env.a2
            * su.grad_norm(p) ** env.beta
            * lebesgue_norm(v, p / (p - env.beta))
        )
    return float(bound)


def convection_integral(v: FEFunction, T_image: QuadratureSamples, f: ConvectionTerm) -> float:
    """int f(x, T(u), grad T(u)) v dx by the level quadrature."""
    _check_samples(v, T_image)
    lvl = v.lvl
    vals = _f_at_samples(f, lvl, T_image)
    return float(np.sum(lvl.qp_weights * vals * v.values_at_qp()))
