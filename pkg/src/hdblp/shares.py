"""Random-coefficient logit shares, their inversion, and derivatives.

The taste shock on price is ``b = sigma * v`` with ``v ~ N(0, 1)``, integrated
with a deterministic Gauss-Hermite rule.  Every function broadcasts over
leading axes, so ``y`` and ``p`` may be a single market ``(J,)`` or a stack of
markets ``(T, J)``.
"""

from dataclasses import dataclass, field

import numpy as np


class InversionError(RuntimeError):
    """Raised when the share inversion fails to converge."""


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and probability weights for integrating over a standard normal."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.size < 1 or nodes.size != weights.size:
            raise ValueError("nodes and weights must have equal length >= 1")
        if np.any(weights < 0) or not np.all(np.isfinite(nodes)):
            raise ValueError("weights must be nonnegative and nodes finite")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def gauss_hermite(cls, n=21):
        """Probabilists' Gauss-Hermite rule with weights normalized to one."""
        nodes, weights = np.polynomial.hermite_e.hermegauss(n)
        weights = weights / weights.sum()
        return cls(nodes, weights)

    def __len__(self):
        return self.nodes.size


DEFAULT_QUADRATURE = QuadratureRule.gauss_hermite(21)


@dataclass
class InversionInfo:
    iterations: int
    residual: float
    converged: bool = True
    newton_steps: int = 0
    per_market_iterations: np.ndarray = field(default=None, repr=False)


def _check(y, p):
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise ValueError(f"utility shape {y.shape} does not match price shape {p.shape}")
    if y.ndim == 0:
        raise ValueError("utilities must have at least one product axis")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise ValueError("utilities and prices must be finite")
    return y, p


def node_shares(y, p, sigma, quad=DEFAULT_QUADRATURE):
    """Logit shares at each quadrature node, shape ``y.shape + (Q,)``."""
    y, p = _check(y, p)
    if not np.isfinite(sigma):
        raise ValueError("sigma must be finite")
    u = y[..., None] + sigma * p[..., None] * quad.nodes
    # outside good has utility 0
    m = np.maximum(u.max(axis=-2, keepdims=True), 0.0)
    e = np.exp(u - m)
    denom = np.exp(-m) + e.sum(axis=-2, keepdims=True)
    return e / denom


def compute_shares(y, p, sigma, quad=DEFAULT_QUADRATURE):
    """Inside-good shares ``f_s(p, y, sigma)``."""
    return node_shares(y, p, sigma, quad) @ quad.weights


def _log_terms(y, p, sigma, quad):
    """Log node shares and ``log(w_q) + log`` node shares, both ``y.shape + (Q,)``."""
    y, p = _check(y, p)
    u = y[..., None] + sigma * p[..., None] * quad.nodes
    m = np.maximum(u.max(axis=-2, keepdims=True), 0.0)
    log_sq = u - (m + np.log(np.exp(-m) + np.exp(u - m).sum(axis=-2, keepdims=True)))
    with np.errstate(divide="ignore"):
        return log_sq, log_sq + np.log(quad.weights)


def _logsumexp(v):
    vmax = v.max(axis=-1, keepdims=True)
    return (vmax + np.log(np.exp(v - vmax).sum(axis=-1, keepdims=True)))[..., 0]


def log_shares(y, p, sigma, quad=DEFAULT_QUADRATURE):
    """``log f_s``, finite even where the shares underflow."""
    return _logsumexp(_log_terms(y, p, sigma, quad)[1])


def log_share_jacobian_y(y, p, sigma, quad=DEFAULT_QUADRATURE):
    """Matrix of ``d log s_i / d y_j``, computed without dividing by tiny shares."""
    log_sq, v = _log_terms(y, p, sigma, quad)
    # node weights conditional on choosing i sum to one over the nodes
    omega = np.exp(v - _logsumexp(v)[..., None])
    return np.eye(y.shape[-1]) - omega @ np.swapaxes(np.exp(log_sq), -1, -2)


def share_jacobian_y(y, p, sigma, quad=DEFAULT_QUADRATURE):
    """Matrix of ``d s_i / d y_j``; shape ``y.shape + (J,)``."""
    sq = node_shares(y, p, sigma, quad)
    s = sq @ quad.weights
    cross = np.einsum("...iq,...jq,q->...ij", sq, sq, quad.weights)
    return _diag(s) - cross


def share_derivative_sigma(y, p, sigma, quad=DEFAULT_QUADRATURE):
    """Vector of ``d s_j / d sigma`` holding ``y`` fixed."""
    y, p = _check(y, p)
    sq = node_shares(y, p, sigma, quad)
    pbar = np.einsum("...jq,...j->...q", sq, p)
    return np.einsum("...jq,q->...j", sq * (p[..., None] - pbar[..., None, :]), quad.nodes * quad.weights)


def _diag(v):
    out = np.zeros(v.shape + v.shape[-1:])
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def contraction_map(x, s, p, sigma, quad=DEFAULT_QUADRATURE):
    """One application of ``x + log(s) - log(f_s(p, x, sigma))``."""
    return x + np.log(s) - log_shares(x, p, sigma, quad)


def validate_shares(s):
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        raise ValueError("shares must have at least one product axis")
    if not np.all(np.isfinite(s)) or np.any(s <= 0) or np.any(s >= 1):
        raise ValueError("shares must lie strictly inside (0, 1)")
    if np.any(s.sum(axis=-1) >= 1):
        raise ValueError("inside shares must sum to less than one")
    return s


def invert_shares(s, p, sigma, quad=DEFAULT_QUADRATURE, tol=1e-12, max_iter=1000,
                  method="hybrid", full_output=False):
    """Recover ``y`` such that ``compute_shares(y, p, sigma) == s``.

    Iterates ``x <- x + log s - log f_s(x)`` from the plain-logit start.  With
    ``method="hybrid"`` a Newton step on the log system (capped at length 2 in
    the sup-norm, then halved up to five times) is tried first at each
    iteration and kept only when it lowers the sup-norm residual; otherwise the
    plain contraction step is taken.  Convergence is declared when
    ``max|log s - log f_s(y)| <= tol`` in every market.
    """
    s = validate_shares(s)
    p = np.asarray(p, dtype=float)
    if p.shape != s.shape:
        raise ValueError(f"share shape {s.shape} does not match price shape {p.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method not in ("hybrid", "contraction"):
        raise ValueError(f"unknown method {method!r}")

    log_s = np.log(s)
    x = log_s - np.log1p(-s.sum(axis=-1, keepdims=True))
    shape = s.shape
    x = x.reshape(-1, shape[-1]).copy()
    log_s = log_s.reshape(x.shape)
    pp = p.reshape(x.shape)

    def residual(x_, rows):
        return log_s[rows] - log_shares(x_, pp[rows], sigma, quad)

    active = np.arange(x.shape[0])
    r = residual(x, active)
    err = np.abs(r).max(axis=-1)
    iters = np.zeros(x.shape[0], dtype=int)
    newton_steps = 0
    it = 0
    while True:
        done = err <= tol
        if done.all():
            break
        if it >= max_iter:
            worst = float(err.max())
            raise InversionError(
                f"share inversion did not converge in {max_iter} iterations (residual {worst:.3e})")
        keep = ~done
        active, r, err = active[keep], r[keep], err[keep]
        it += 1
        iters[active] += 1
        x_new = x[active] + r
        if method == "hybrid":
            jac = log_share_jacobian_y(x[active], pp[active], sigma, quad)
            try:
                step = np.linalg.solve(jac, r[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.full_like(r, np.nan)
            pending = np.all(np.isfinite(step), axis=-1)
            # long steps can land where the Jacobian is nearly singular
            size = np.abs(np.where(pending[:, None], step, 0.0)).max(axis=-1, initial=0.0)
            step *= np.minimum(1.0, 2.0 / np.maximum(size, 1e-300))[:, None]
            t = 1.0
            for _ in range(6):
                if not pending.any():
                    break
                rows = np.flatnonzero(pending)
                x_try = x[active[rows]] + t * step[rows]
                r_try = residual(x_try, active[rows])
                better = np.abs(r_try).max(axis=-1) < err[rows]
                x_new[rows[better]] = x_try[better]
                newton_steps += int(better.sum())
                pending[rows[better]] = False
                t *= 0.5
        x[active] = x_new
        r = residual(x_new, active)
        err = np.abs(r).max(axis=-1)

    y = x.reshape(shape)
    if full_output:
        r_final = log_s - log_shares(x, pp, sigma, quad)
        info = InversionInfo(iterations=it, residual=float(np.abs(r_final).max()),
                             newton_steps=newton_steps, per_market_iterations=iters.reshape(shape[:-1]))
        return y, info
    return y


def dy_dsigma(s, p, sigma, quad=DEFAULT_QUADRATURE, y=None, tol=1e-12, max_iter=1000):
    """Derivative of the inverted utilities with respect to ``sigma``.

    Implicit differentiation of ``f_s(p, y(sigma), sigma) = s``:
    ``dy/dsigma = -(df_s/dy)^{-1} df_s/dsigma``.  Pass ``y`` to skip the
    inversion when it is already known.
    """
    if y is None:
        y = invert_shares(s, p, sigma, quad, tol=tol, max_iter=max_iter)
    jac = share_jacobian_y(y, p, sigma, quad)
    ds = share_derivative_sigma(y, p, sigma, quad)
    try:
        return -np.linalg.solve(jac, ds[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("share Jacobian is singular; shares are degenerate") from exc


class InversionCache:
    """Memoized ``y(sigma)`` for a fixed panel of shares and prices.

    Estimation routines evaluate the same sigma values many times across
    folds and estimators; this keeps one inversion per distinct sigma.
    """

    def __init__(self, s, p, quad=DEFAULT_QUADRATURE, tol=1e-12, max_iter=1000):
        self.s = validate_shares(s)
        self.p = np.asarray(p, dtype=float)
        self.quad = quad
        self.tol = tol
        self.max_iter = max_iter
        self._y = {}
        self._dy = {}

    def __call__(self, sigma):
        key = float(sigma)
        if key not in self._y:
            self._y[key] = invert_shares(self.s, self.p, key, self.quad, self.tol, self.max_iter)
        return self._y[key]

    def derivative(self, sigma):
        key = float(sigma)
        if key not in self._dy:
            self._dy[key] = dy_dsigma(self.s, self.p, key, self.quad, y=self(key))
        return self._dy[key]

    def __len__(self):
        return len(self._y)
