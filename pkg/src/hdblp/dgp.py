"""Simulated markets with many characteristics and a sparse utility index.

Each market ``t`` gets its own Philox stream spawned from ``seed``, so a
market's draws do not depend on how many markets are generated or in which
order.
"""

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .shares import QuadratureRule, compute_shares, validate_shares

E_EXP_ETA = 1.175201  # E[exp(eta)] for eta ~ U[-1, 1], i.e. sinh(1)


@dataclass
class DgpConfig:
    T: int = 50
    J: int = 4
    d_x: int = 200
    d_z: int = 4
    sigma0: float = 1.0
    alpha0: float = -1.0
    seed: int = 0
    quad_nodes: int = 21
    # 0 switches off the demand shock (noiseless recovery checks)
    xi_scale: float = 1.0

    def __post_init__(self):
        if self.T < 1 or self.J < 1:
            raise ValueError("need T >= 1 and J >= 1")
        if not 1 <= self.d_z <= 4:
            raise ValueError("the simulated design has between one and four instruments")
        if self.d_x < self.d_z + 5:
            raise ValueError(f"d_x must be at least {self.d_z + 5} to hold the instrument loadings")

    @property
    def beta0(self):
        """``2 * (1, 1/4, 1/9, 1/16, 0, ...)``."""
        b = np.zeros(self.d_x)
        b[:4] = 2.0 / np.arange(1, 5) ** 2
        return b

    @property
    def Pi0(self):
        """Row ``i`` (1-based) is ``(i zeros, 1, 1/4, ..., 1/25, zeros) / 2``."""
        P = np.zeros((self.d_z, self.d_x))
        for i in range(1, self.d_z + 1):
            P[i - 1, i:i + 5] = 0.5 / np.arange(1, 6) ** 2
        return P

    @property
    def beta_p0(self):
        b = np.zeros(self.d_x)
        b[0] = 1.2
        b[-4:] = 1.2
        return b

    @property
    def quadrature(self):
        return QuadratureRule.gauss_hermite(self.quad_nodes)


@dataclass
class MarketData:
    """Observables for one market: ``x`` (J, d_x), ``p`` (J,), ``z`` (J, d_z), ``s`` (J,)."""

    x: np.ndarray
    p: np.ndarray
    z: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        J = len(self.p)
        if self.x.shape[0] != J or self.z.shape[0] != J or len(self.s) != J:
            raise ValueError("market arrays disagree on the number of products")
        validate_shares(self.s)


@dataclass
class Observables:
    """Stacked market data; arrays carry a leading market axis."""

    x: np.ndarray
    p: np.ndarray
    z: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.s = validate_shares(self.s)
        T, J = self.p.shape
        if self.x.shape[:2] != (T, J) or self.z.shape[:2] != (T, J) or self.s.shape != (T, J):
            raise ValueError("observable arrays must share the (T, J) leading shape")

    @property
    def T(self):
        return self.p.shape[0]

    @property
    def J(self):
        return self.p.shape[1]

    @property
    def d_x(self):
        return self.x.shape[2]

    @property
    def d_z(self):
        return self.z.shape[2]

    def market(self, t):
        return MarketData(self.x[t], self.p[t], self.z[t], self.s[t])

    def subset(self, markets):
        markets = np.asarray(markets)
        return Observables(self.x[markets], self.p[markets], self.z[markets], self.s[markets])


@dataclass
class Truth:
    config: DgpConfig
    xi: np.ndarray
    eps_z: np.ndarray
    u_p: np.ndarray

    @property
    def theta1(self):
        return (self.config.sigma0, self.config.alpha0)

    def report(self):
        return truth_report(self.config)


@dataclass
class Dataset:
    obs: Observables
    truth: Truth = None

    @property
    def T(self):
        return self.obs.T

    def market(self, t):
        return self.obs.market(t)


def _draw_market(rng, J, d_x):
    x_rand = np.sqrt(3.0) * rng.uniform(-1.0, 1.0, size=(J, d_x - 1))
    xi = rng.uniform(-1.0, 1.0, size=J)
    eta = rng.uniform(-1.0, 1.0, size=(J, 2))
    return x_rand, xi, eta


def generate_dataset(cfg=None):
    """Draw ``cfg.T`` markets from the simulation design."""
    cfg = cfg or DgpConfig()
    T, J, d_x = cfg.T, cfg.J, cfg.d_x
    x = np.empty((T, J, d_x))
    xi = np.empty((T, J))
    eta = np.empty((T, J, 2))
    for t, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(T)):
        x_rand, xi[t], eta[t] = _draw_market(np.random.Generator(np.random.Philox(child)), J, d_x)
        x[t, :, 0] = 1.0
        x[t, :, 1:] = x_rand
    xi *= cfg.xi_scale

    e1, e2 = eta[..., 0], eta[..., 1]
    eps_all = np.stack([(e1 ** 2 - 1.0 / 3.0) * 1.34, (e2 ** 2 - 1.0 / 3.0) * 1.34,
                        e1 * 0.86, e2 * 0.86], axis=-1)
    eps_z = eps_all[..., :cfg.d_z]
    z = x @ cfg.Pi0.T + eps_z
    u_p = (xi + (x[..., 1] ** 2 - 1.0) / 10.0 + (x[..., 2] ** 2 - 1.0) / 5.0 + e1 + 0.5 * e2
           + (np.exp(e1) - E_EXP_ETA) / 5.0 + (np.exp(e2) - E_EXP_ETA) / 5.0)
    p = x @ cfg.beta_p0 + u_p
    y = cfg.alpha0 * p + x @ cfg.beta0 + xi
    s = compute_shares(y, p, cfg.sigma0, cfg.quadrature)
    obs = Observables(x=x, p=p, z=z, s=s)
    return Dataset(obs=obs, truth=Truth(config=cfg, xi=xi, eps_z=eps_z, u_p=u_p))


def truth_report(cfg):
    """Plain-dict record of the true parameters for scoring and oracle estimators."""
    beta0 = cfg.beta0
    support = np.flatnonzero(beta0)
    return {
        "theta1": {"sigma": cfg.sigma0, "alpha": cfg.alpha0},
        "beta0_support": support.tolist(),
        "beta0_values": beta0[support].tolist(),
        "Pi0": cfg.Pi0.tolist(),
        "beta_p0": cfg.beta_p0.tolist(),
        "d_z": cfg.d_z,
        "d_x": cfg.d_x,
    }


def _header(d_z, d_x):
    return (["j", "t", "s", "p"] + [f"z{i + 1}" for i in range(d_z)]
            + [f"x{k + 1}" for k in range(d_x)])


def write_csv(dataset, path):
    """Write one row per (j, t) plus a ``.truth.json`` sidecar when truth is known.

    Floats are written with ``repr`` so re-reading is bit-exact.
    """
    path = Path(path)
    obs = dataset.obs
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(obs.d_z, obs.d_x))
        for t in range(obs.T):
            for j in range(obs.J):
                row = np.r_[obs.s[t, j], obs.p[t, j], obs.z[t, j], obs.x[t, j]]
                w.writerow([j, t] + [repr(v) for v in row.tolist()])
    if dataset.truth is not None:
        tr = dataset.truth
        side = {
            "config": asdict(tr.config),
            "truth": truth_report(tr.config),
            "xi": tr.xi.tolist(),
            "eps_z": tr.eps_z.tolist(),
            "u_p": tr.u_p.tolist(),
        }
        sidecar_path(path).write_text(json.dumps(side))
    return path


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".truth.json")


def read_csv(path):
    """Inverse of :func:`write_csv`."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d_z = sum(h.startswith("z") for h in header)
    d_x = sum(h.startswith("x") for h in header)
    jt = np.array([[int(r[0]), int(r[1])] for r in body])
    J, T = jt[:, 0].max() + 1, jt[:, 1].max() + 1
    vals = np.array([[float(v) for v in r[2:]] for r in body])
    x = np.empty((T, J, d_x))
    z = np.empty((T, J, d_z))
    p = np.empty((T, J))
    s = np.empty((T, J))
    j, t = jt[:, 0], jt[:, 1]
    s[t, j] = vals[:, 0]
    p[t, j] = vals[:, 1]
    z[t, j] = vals[:, 2:2 + d_z]
    x[t, j] = vals[:, 2 + d_z:]
    truth = None
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        truth = Truth(config=DgpConfig(**meta["config"]), xi=np.array(meta["xi"]),
                      eps_z=np.array(meta["eps_z"]), u_p=np.array(meta["u_p"]))
    return Dataset(obs=Observables(x=x, p=p, z=z, s=s), truth=truth)
