import json

import numpy as np
import pytest

from hdblp.dgp import (E_EXP_ETA, DgpConfig, Observables, generate_dataset, read_csv, sidecar_path,
                       truth_report, write_csv)
from hdblp.shares import invert_shares


@pytest.fixture(scope="module")
def small():
    return generate_dataset(DgpConfig(T=20, d_x=30, seed=3))


def test_defaults():
    cfg = DgpConfig()
    assert (cfg.T, cfg.J, cfg.d_x, cfg.d_z) == (50, 4, 200, 4)
    rep = truth_report(cfg)
    assert rep["theta1"] == {"sigma": 1.0, "alpha": -1.0}
    assert rep["beta0_support"] == [0, 1, 2, 3]
    np.testing.assert_allclose(rep["beta0_values"], [2.0, 0.5, 2.0 / 9, 2.0 / 16])
    assert rep["d_z"] == 4


def test_parameter_patterns():
    cfg = DgpConfig(d_x=12)
    Pi = cfg.Pi0
    assert Pi.shape == (4, 12)
    decay = 0.5 / np.arange(1, 6) ** 2
    for i in range(4):
        np.testing.assert_allclose(Pi[i, i + 1:i + 6], decay)
        assert np.count_nonzero(Pi[i]) == 5
    bp = cfg.beta_p0
    assert bp[0] == 1.2 and np.all(bp[-4:] == 1.2) and np.count_nonzero(bp) == 5


def test_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(d_z=5)
    with pytest.raises(ValueError):
        DgpConfig(d_x=8)
    with pytest.raises(ValueError):
        DgpConfig(T=0)


def test_bit_reproducible(small):
    again = generate_dataset(DgpConfig(T=20, d_x=30, seed=3))
    for name in ("x", "p", "z", "s"):
        np.testing.assert_array_equal(getattr(small.obs, name), getattr(again.obs, name))
    other = generate_dataset(DgpConfig(T=20, d_x=30, seed=4))
    assert not np.array_equal(small.obs.p, other.obs.p)


def test_market_streams_independent_of_T():
    a = generate_dataset(DgpConfig(T=5, d_x=20, seed=9))
    b = generate_dataset(DgpConfig(T=8, d_x=20, seed=9))
    np.testing.assert_array_equal(a.obs.x, b.obs.x[:5])


def test_structure(small):
    obs = small.obs
    assert obs.x.shape == (20, 4, 30) and obs.z.shape == (20, 4, 4)
    assert np.all(obs.x[..., 0] == 1.0)
    assert np.all(np.abs(obs.x[..., 1:]) <= np.sqrt(3.0))
    cfg = small.truth.config
    np.testing.assert_allclose(obs.z, obs.x @ cfg.Pi0.T + small.truth.eps_z, atol=1e-14)
    np.testing.assert_allclose(obs.p, obs.x @ cfg.beta_p0 + small.truth.u_p, atol=1e-14)


def test_shares_invert_to_utilities(small):
    cfg = small.truth.config
    obs = small.obs
    y = cfg.alpha0 * obs.p + obs.x @ cfg.beta0 + small.truth.xi
    np.testing.assert_allclose(invert_shares(obs.s, obs.p, cfg.sigma0), y, atol=1e-8)


def test_moment_conditions_shrink():
    ds = generate_dataset(DgpConfig(T=5000, d_x=9, seed=1))
    x = ds.obs.x.reshape(-1, 9)
    xi = ds.truth.xi.ravel()
    ez = ds.truth.eps_z.reshape(-1, 4)
    n = xi.size
    for k in range(1, 9):
        v = xi * x[:, k]
        assert abs(v.mean()) <= 4 * v.std() / np.sqrt(n)
        for i in range(4):
            w = ez[:, i] * x[:, k]
            assert abs(w.mean()) <= 4 * w.std() / np.sqrt(n)


def test_exp_eta_constant():
    assert abs(E_EXP_ETA - np.sinh(1.0)) < 1e-6


def test_csv_round_trip(tmp_path, small):
    path = write_csv(small, tmp_path / "d.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header[:6] == ["j", "t", "s", "p", "z1", "z2"]
    assert header[-1] == "x30"
    back = read_csv(path)
    for name in ("x", "p", "z", "s"):
        np.testing.assert_array_equal(getattr(back.obs, name), getattr(small.obs, name))
    np.testing.assert_array_equal(back.truth.xi, small.truth.xi)
    side = json.loads(sidecar_path(path).read_text())
    assert side["truth"]["theta1"] == {"sigma": 1.0, "alpha": -1.0}


def test_csv_without_truth(tmp_path, small):
    from hdblp.dgp import Dataset

    path = write_csv(Dataset(obs=small.obs), tmp_path / "obs.csv")
    assert not sidecar_path(path).exists()
    assert read_csv(path).truth is None


def test_observables_validation(small):
    obs = small.obs
    with pytest.raises(ValueError):
        Observables(obs.x[:, :3], obs.p, obs.z, obs.s)
    sub = obs.subset([0, 2])
    np.testing.assert_array_equal(sub.p, obs.p[[0, 2]])
    m = obs.market(1)
    np.testing.assert_array_equal(m.x, obs.x[1])
