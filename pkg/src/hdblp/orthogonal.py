"""GMM over ``(sigma, alpha)`` with linear-in-``alpha`` moments, and sandwich inference.

Every estimator here uses per-product contributions of the form

    phi_jt(sigma, alpha) = Z_jt * (y_jt(sigma) - alpha * p_jt - o_jt)

where ``Z`` are instruments and ``o`` a fixed offset (``x'beta`` for some
plugged-in ``beta``).  With cross-fitting, ``Z`` and ``o`` for market ``t``
are built from the nuisances of the fold holding ``t``.  For fixed ``sigma``
the mean moment is affine in ``alpha``, so the weighted objective is a
quadratic in ``alpha`` with a closed-form minimizer.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .search import profile_minimize
from .shares import DEFAULT_QUADRATURE, invert_shares


@dataclass(frozen=True)
class Box:
    sigma: tuple = (0.0, 3.0)
    alpha: tuple = (-10.0, 10.0)

    def __post_init__(self):
        if not (self.sigma[0] < self.sigma[1] and self.alpha[0] < self.alpha[1]):
            raise ValueError("box bounds must be increasing")

    def contains(self, sigma, alpha):
        return (self.sigma[0] <= sigma <= self.sigma[1]) and (self.alpha[0] <= alpha <= self.alpha[1])

    def sigma_grid(self, n=61):
        return np.linspace(self.sigma[0], self.sigma[1], n)


DEFAULT_BOX = Box()


@dataclass(frozen=True)
class ThetaOne:
    sigma: float
    alpha: float
    box: Box = DEFAULT_BOX

    def __post_init__(self):
        if not self.box.contains(self.sigma, self.alpha):
            raise ValueError(f"({self.sigma}, {self.alpha}) lies outside the parameter box")

    def as_array(self):
        return np.array([self.sigma, self.alpha])


@dataclass
class EstimateReport:
    """Point estimate, plug-in inference and diagnostics for one estimator run."""

    estimator: str
    sigma: float = float("nan")
    alpha: float = float("nan")
    se: tuple = (float("nan"), float("nan"))
    vcov: list = field(default_factory=lambda: [[float("nan")] * 2] * 2)
    tstats: tuple = (float("nan"), float("nan"))
    pvalues: tuple = (float("nan"), float("nan"))
    objective: float = float("nan")
    n_evals: int = 0
    n_failed_points: int = 0
    converged: bool = False
    error: str = None
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.error is None and self.converged

    def to_dict(self):
        d = asdict(self)
        d["se"] = list(d["se"])
        d["tstats"] = list(d["tstats"])
        d["pvalues"] = list(d["pvalues"])
        d["vcov"] = np.asarray(self.vcov, dtype=float).tolist()
        return d

    def to_json(self):
        return json.dumps(jsonable(self.to_dict()))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("se", "tstats", "pvalues"):
            d[k] = tuple(_nan(v) for v in d[k])
        d["vcov"] = [[_nan(v) for v in row] for row in d["vcov"]]
        for k in ("sigma", "alpha", "objective"):
            d[k] = _nan(d[k])
        return cls(**d)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def _nan(v):
    return float("nan") if v is None else float(v)


def jsonable(obj):
    # JSON has no NaN; write null and read it back as NaN
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    return obj


class MomentSystem:
    """Moment contributions ``Z * (y(sigma) - alpha p - offset)`` on a panel.

    ``instruments`` is ``(T, J, d)``, ``offset`` and ``p`` are ``(T, J)`` and
    ``cache`` maps sigma to the inverted ``(T, J)`` utilities.
    """

    def __init__(self, instruments, offset, p, cache):
        self.Z = np.asarray(instruments, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.p = np.asarray(p, dtype=float)
        if self.Z.ndim != 3 or self.Z.shape[:2] != self.p.shape or self.offset.shape != self.p.shape:
            raise ValueError("instruments must be (T, J, d) with offset and price (T, J)")
        self.cache = cache
        T, J, _ = self.Z.shape
        self.n = T * J
        self.b = np.einsum("tjd,tj->d", self.Z, self.p) / self.n

    @property
    def T(self):
        return self.Z.shape[0]

    @property
    def J(self):
        return self.Z.shape[1]

    @property
    def dim(self):
        return self.Z.shape[2]

    def a(self, sigma):
        return np.einsum("tjd,tj->d", self.Z, self.cache(sigma) - self.offset) / self.n

    def residual(self, sigma, alpha):
        return self.cache(sigma) - alpha * self.p - self.offset

    def mean(self, sigma, alpha):
        return self.a(sigma) - alpha * self.b

    def contributions(self, sigma, alpha):
        """Per-product contributions, shape ``(T * J, d)``."""
        return (self.Z * self.residual(sigma, alpha)[..., None]).reshape(self.n, self.dim)

    def market_moments(self, sigma, alpha):
        """``E_J`` of the contributions in each market, shape ``(T, d)``."""
        return np.einsum("tjd,tj->td", self.Z, self.residual(sigma, alpha)) / self.J

    def objective(self, sigma, alpha, W=None):
        m = self.mean(sigma, alpha)
        return float(m @ m) if W is None else float(m @ W @ m)

    def alpha_star(self, sigma, W=None, box=DEFAULT_BOX):
        """Minimizer in ``alpha`` at fixed ``sigma``, clipped to the box."""
        a = self.a(sigma)
        Wb = self.b if W is None else W @ self.b
        den = float(self.b @ Wb)
        if den <= 0:
            raise np.linalg.LinAlgError("price does not move the moments; alpha is not identified")
        return float(np.clip(a @ Wb / den, *box.alpha))

    def jacobian(self, sigma):
        """``d mean / d (sigma, alpha)`` as a ``(2, d)`` array."""
        dy = self.cache.derivative(sigma)
        return np.vstack([np.einsum("tjd,tj->d", self.Z, dy) / self.n, -self.b])


def psi_moment(market, sigma, alpha, Pi, beta, quad=DEFAULT_QUADRATURE, y=None):
    """Orthogonal moment for one market: ``E_J (z - Pi x)(y(sigma) - alpha p - x'beta)``."""
    if y is None:
        y = invert_shares(market.s, market.p, sigma, quad)
    resid = y - alpha * market.p - market.x @ beta
    return (market.z - market.x @ np.asarray(Pi).T).T @ resid / market.p.size


def gmm_objective(system, sigma, alpha, W=None):
    return system.objective(sigma, alpha, W)


@dataclass
class GmmResult:
    theta: ThetaOne
    objective: float
    n_evals: int
    n_failed: int


def minimize_gmm(system, W=None, box=DEFAULT_BOX, grid_points=61, tol=1e-6):
    """Profile out ``alpha`` in closed form and search ``sigma`` on a grid plus golden section."""

    def profile(sigma):
        alpha = system.alpha_star(sigma, W, box)
        return system.objective(sigma, alpha, W), alpha

    res = profile_minimize(profile, box.sigma_grid(grid_points), tol=tol)
    return GmmResult(theta=ThetaOne(res.x, res.payload, box), objective=res.value,
                     n_evals=res.n_evals, n_failed=res.n_failed)


def weight_from_contributions(phi):
    """Inverse second-moment matrix of the rows of ``phi``.

    A ridge of ``1e-10 * trace / d`` is added only if the second-moment
    matrix fails a Cholesky factorization.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    S = phi.T @ phi / phi.shape[0]
    S = 0.5 * (S + S.T)
    d = S.shape[0]
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        S = S + 1e-10 * np.trace(S) / d * np.eye(d)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("moment covariance is singular") from exc
    Linv = np.linalg.solve(L, np.eye(d))
    W = Linv.T @ Linv
    return 0.5 * (W + W.T)


def optimal_weight(system, theta):
    return weight_from_contributions(system.contributions(theta.sigma, theta.alpha))


def sandwich(G, W, Omega, T):
    """``(G W G')^-1 G W Omega W G' (G W G')^-1 / T`` for a ``(k, d)`` Jacobian ``G``."""
    G = np.atleast_2d(G)
    W = np.atleast_2d(W)
    Omega = np.atleast_2d(Omega)
    A = G @ W @ G.T
    Ainv = np.linalg.inv(A)
    V = Ainv @ G @ W @ Omega @ W @ G.T @ Ainv / T
    return 0.5 * (V + V.T)


def asymptotic_se(system, theta, W=None):
    """Plug-in ``(vcov, se)`` at ``theta``.

    ``Omega`` is the uncentered second moment of the market-level moments.
    """
    W = np.eye(system.dim) if W is None else W
    G = system.jacobian(theta.sigma)
    psi = system.market_moments(theta.sigma, theta.alpha)
    Omega = psi.T @ psi / system.T
    V = sandwich(G, W, Omega, system.T)
    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    return V, se


def crossfit_arrays(obs, plan, fits):
    """Orthogonal instruments ``z - Pi_hat x`` and offsets ``x'beta_hat``, fold by fold."""
    Z = np.empty((obs.T, obs.J, obs.d_z))
    offset = np.empty((obs.T, obs.J))
    for l, fit in enumerate(fits):
        idx = plan.fold(l)
        x = obs.x[idx]
        Z[idx] = obs.z[idx] - fit.fz(x)
        offset[idx] = fit.fu(x)
    return Z, offset


def crossfit_system(obs, plan, fits, cache):
    Z, offset = crossfit_arrays(obs, plan, fits)
    return MomentSystem(Z, offset, obs.p, cache)
