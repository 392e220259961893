"""Log-posterior gradients, HMC correctness on closed-form targets,
diagnostics, and trace round-trips."""

import math

import numpy as np
import pytest

from mfgpc.data import HIGH, LOW, LabeledDataset
from mfgpc.errors import ConfigError, SamplerFailure
from mfgpc.gp.sparse import InducingSet, kmeans_inducing
from mfgpc.inference import (
    MF,
    SF,
    SPARSE_MF,
    KernelConfig,
    SamplerConfig,
    build_model,
    hmc_sample,
    log_posterior,
)
from mfgpc.inference.diagnostics import effective_sample_size, split_rhat
from mfgpc.inference.hmc import leapfrog
from mfgpc.inference.trace import export_trace, load_trace


def random_model(r, kind=None, max_low=8, max_high=6):
    kind = kind or r.choice([SF, MF, SPARSE_MF])
    d = int(r.integers(1, 3))
    n_low = int(r.integers(2, max_low))
    n_high = int(r.integers(2, max_high))
    m_ls = int(r.choice([1, d]))
    config = KernelConfig(n_lengthscales=m_ls)
    if kind == SF:
        X = r.uniform(size=(n_high + 2, d))
        y = r.integers(0, 2, size=n_high + 2)
        ds = LabeledDataset(inputs=X, labels=y)
        return build_model(ds, SF, config)
    X = r.uniform(size=(n_low + n_high, d))
    y = r.integers(0, 2, size=n_low + n_high)
    ds = LabeledDataset(
        inputs=X, labels=y,
        fidelity=np.array([LOW] * n_low + [HIGH] * n_high),
    )
    if kind == MF:
        return build_model(ds, MF, config)
    m_low = int(r.integers(1, n_low + 1))
    inducing = InducingSet(
        X_u=np.vstack([kmeans_inducing(ds.inputs_low, m_low, seed=int(r.integers(1000))),
                       ds.inputs_high]),
        n_low=m_low,
    )
    return build_model(ds, SPARSE_MF, config, inducing=inducing)


class GaussianTarget:
    """Closed-form multivariate normal target for sampler validation."""

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.cov = cov
        self.prec = np.linalg.inv(cov)
        self.dim = cov.shape[0]
        self.report_names = tuple(f"x[{i}]" for i in range(self.dim))
        self.latent_names = ()

    def logp_grad(self, x):
        g = -self.prec @ x
        return 0.5 * float(x @ g), g

    def report(self, x):
        return np.asarray(x, dtype=float)

    def initial_position(self, rng):
        return rng.standard_normal(self.dim)


class TestGradients:
    def finite_difference_check(self, model, r, rel_tol=1e-4):
        x = model.initial_position(r)
        x += 0.3 * r.standard_normal(model.dim)
        lp, grad = model.logp_grad(x)
        assert np.isfinite(lp)
        step = 1e-5
        idx = r.choice(model.dim, size=min(model.dim, 12), replace=False)
        for i in idx:
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            fd = (model.logp_grad(xp)[0] - model.logp_grad(xm)[0]) / (2 * step)
            scale = max(abs(fd), abs(grad[i]), 1e-6)
            assert abs(grad[i] - fd) / scale < rel_tol, (
                f"param {i}: analytic {grad[i]:.10g} vs fd {fd:.10g}"
            )

    def test_gradients_match_finite_differences_100_models(self):
        r = np.random.default_rng(1234)
        for k in range(100):
            model = random_model(r)
            self.finite_difference_check(model, r)

    def test_gradient_each_kind_explicitly(self):
        r = np.random.default_rng(77)
        for kind in (SF, MF, SPARSE_MF):
            for _ in range(5):
                self.finite_difference_check(random_model(r, kind), r)

    def test_log_posterior_free_function(self):
        r = np.random.default_rng(3)
        model = random_model(r, SF)
        x = model.initial_position(r)
        lp, grad = log_posterior(x, model)
        assert np.isfinite(lp) and grad.shape == (model.dim,)

    def test_data_free_model_is_prior_only(self):
        ds = LabeledDataset(inputs=np.empty((0, 2)), labels=[],
                            fidelity=np.array([], dtype="U1"))
        model = build_model(ds, SF, KernelConfig(1))
        x = np.zeros(model.dim)  # eta = ell = 1, no latents
        lp, _ = model.logp_grad(x)
        from mfgpc.kernels import ArdSqExpParams, log_prior

        expected = log_prior(ArdSqExpParams(1.0, [1.0]), None)
        assert lp == pytest.approx(expected, abs=1e-12)

    def test_single_datum_forced_neutral(self):
        ds = LabeledDataset(inputs=[[0.5]], labels=[1])
        model = build_model(ds, SF, KernelConfig(1))
        x = np.zeros(model.dim)  # z = 0 so f = 0, sigma(0) = 0.5
        lp, _ = model.logp_grad(x)
        from mfgpc.kernels import ArdSqExpParams, log_prior

        expected = (
            log_prior(ArdSqExpParams(1.0, [1.0]), None)
            - 0.5 * math.log(2 * math.pi)
            + math.log(0.5)
        )
        assert lp == pytest.approx(expected, abs=1e-12)

    def test_nonfinite_state_rejected_not_raised(self):
        r = np.random.default_rng(5)
        model = random_model(r, SF)
        x = model.initial_position(r)
        x[0] = 200.0  # log eta far outside any believable range
        lp, grad = model.logp_grad(x)
        assert lp == -np.inf


class TestLeapfrog:
    def test_time_reversibility(self):
        target = GaussianTarget(np.array([[1.0, 0.6], [0.6, 2.0]]))
        r = np.random.default_rng(11)
        x0 = r.standard_normal(2)
        p0 = r.standard_normal(2)
        _, grad0 = target.logp_grad(x0)
        x1, p1, _, grad1 = leapfrog(x0, p0, grad0, 0.15, 20, target.logp_grad)
        x2, p2, _, _ = leapfrog(x1, -p1, grad1, 0.15, 20, target.logp_grad)
        np.testing.assert_allclose(x2, x0, atol=1e-8)
        np.testing.assert_allclose(-p2, p0, atol=1e-8)

    def test_hamiltonian_drift_small_at_adapted_step(self):
        target = GaussianTarget(np.eye(3))
        trace = hmc_sample(target, SamplerConfig(
            n_chains=1, n_warmup=300, n_samples=1, seed=0))
        step = trace.step_sizes[0]
        r = np.random.default_rng(4)
        drifts = []
        for _ in range(50):
            x = r.standard_normal(3)
            p = r.standard_normal(3)
            lp, grad = target.logp_grad(x)
            h0 = -lp + 0.5 * p @ p
            x1, p1, lp1, _ = leapfrog(x, p, grad, step, 8, target.logp_grad)
            drifts.append(abs((-lp1 + 0.5 * p1 @ p1) - h0))
        assert np.median(drifts) <= 0.2


class TestHmcGaussianTargets:
    def test_standard_normal_moments(self):
        target = GaussianTarget(np.eye(1))
        trace = hmc_sample(target, SamplerConfig(
            n_chains=2, n_warmup=500, n_samples=1000, seed=42))
        draws = trace.reported[:, :, 0].ravel()
        assert draws.shape[0] == 2000
        assert abs(draws.mean()) <= 0.05
        assert 0.9 <= draws.var(ddof=1) <= 1.1

    def test_correlated_5d_covariance(self):
        idx = np.arange(5)
        cov = 0.6 ** np.abs(idx[:, None] - idx[None, :])
        target = GaussianTarget(cov)
        trace = hmc_sample(target, SamplerConfig(
            n_chains=2, n_warmup=800, n_samples=2000, seed=7,
            trajectory_length=1.5))
        flat = trace.reported.reshape(-1, 5)
        sample_cov = np.cov(flat.T)
        err = np.linalg.norm(sample_cov - cov)
        assert err <= 0.15, err

    def test_same_seed_identical_traces(self):
        r = np.random.default_rng(9)
        model = random_model(r, SF)
        cfg = SamplerConfig(n_chains=2, n_warmup=50, n_samples=40, seed=123)
        t1 = hmc_sample(model, cfg)
        t2 = hmc_sample(model, cfg)
        np.testing.assert_array_equal(t1.positions, t2.positions)

    def test_accept_rate_near_target(self):
        target = GaussianTarget(np.eye(4))
        cfg = SamplerConfig(n_chains=2, n_warmup=600, n_samples=600,
                            target_accept=0.95, seed=3)
        trace = hmc_sample(target, cfg)
        for rate in trace.accept_rates:
            assert abs(rate - 0.95) <= 0.07

    def test_divergence_failure_reports_diagnostics(self):
        class Cliff:
            # wall below the sampler's step-size floor: every proposal
            # leaves the support, so adaptation cannot rescue it
            dim = 1
            report_names = ("x",)
            latent_names = ()

            def logp_grad(self, x):
                if abs(x[0]) > 0.0:
                    return -np.inf, np.zeros(1)
                return 0.0, np.zeros(1)

            def report(self, x):
                return x

            def initial_position(self, rng):
                return np.zeros(1)

        with pytest.raises(SamplerFailure) as err:
            hmc_sample(Cliff(), SamplerConfig(n_chains=1, n_warmup=500,
                                              n_samples=10, seed=0))
        assert "divergence" in str(err.value)
        assert "step_size" in err.value.diagnostics


class TestWhitenedPrior:
    def test_latent_prior_matches_covariance(self):
        """f = L z with z ~ N(0, I) must reproduce K as its covariance."""
        r = np.random.default_rng(15)
        X = r.uniform(size=(5, 2))
        ds = LabeledDataset(inputs=X, labels=r.integers(0, 2, size=5))
        model = build_model(ds, SF, KernelConfig(1))
        phi = np.array([0.0, 0.0])  # eta = ell = 1
        from mfgpc.kernels import ArdSqExpParams, gram_matrix

        K = gram_matrix(X, X, ArdSqExpParams(1.0, [1.0]))
        L = np.linalg.cholesky(K + 1e-8 * np.eye(5))
        draws = np.stack([L @ r.standard_normal(5) for _ in range(5000)])
        sample_cov = np.cov(draws.T)
        rel = np.linalg.norm(sample_cov - K) / np.linalg.norm(K)
        assert rel <= 0.2

    def test_constrained_parameters_positive_in_every_draw(self):
        r = np.random.default_rng(21)
        model = random_model(r, MF)
        trace = hmc_sample(model, SamplerConfig(n_chains=2, n_warmup=150,
                                                n_samples=100, seed=5))
        for j, name in enumerate(model.report_names):
            vals = trace.reported[:, :, j]
            if name != "rho":
                assert np.all(vals > 0), name


class TestDiagnostics:
    def test_split_rhat_near_one_for_iid(self):
        r = np.random.default_rng(0)
        x = r.standard_normal((2, 2000))
        assert abs(split_rhat(x) - 1.0) < 0.05

    def test_split_rhat_detects_divergent_means(self):
        r = np.random.default_rng(0)
        x = r.standard_normal((2, 2000))
        x[1] += 5.0
        assert split_rhat(x) > 2.0

    def test_split_rhat_detects_trend_within_chain(self):
        # a strong trend makes the two halves of each chain disagree
        x = np.linspace(0, 5, 1000)[None, :].repeat(2, axis=0)
        x = x + 0.01 * np.random.default_rng(0).standard_normal((2, 1000))
        assert split_rhat(x) > 1.5

    def test_ess_close_to_n_for_iid(self):
        r = np.random.default_rng(1)
        x = r.standard_normal((2, 4000))
        ess = effective_sample_size(x)
        assert ess > 2500

    def test_ess_small_for_sticky_chain(self):
        r = np.random.default_rng(2)
        n = 4000
        x = np.empty((1, n))
        x[0, 0] = 0.0
        for i in range(1, n):
            x[0, i] = 0.995 * x[0, i - 1] + 0.1 * r.standard_normal()
        assert effective_sample_size(x) < 500


class TestTraceExport:
    def test_row_count(self, tmp_path):
        target = GaussianTarget(np.eye(3))
        trace = hmc_sample(target, SamplerConfig(n_chains=1, n_warmup=20,
                                                 n_samples=2, seed=0))
        path = tmp_path / "t.csv"
        export_trace(trace, path)
        rows = path.read_text().strip().splitlines()
        assert len(rows) == 1 + 2 * 3  # header + draws x params

    def test_lossless_round_trip(self, tmp_path):
        r = np.random.default_rng(31)
        model = random_model(r, MF)
        trace = hmc_sample(model, SamplerConfig(n_chains=2, n_warmup=60,
                                                n_samples=30, seed=8))
        path = tmp_path / "t.csv"
        export_trace(trace, path)
        names, values = load_trace(path)
        assert tuple(names) == trace.parameter_names()
        np.testing.assert_array_equal(values, trace.record_matrix())

    def test_rhat_recomputed_from_file(self, tmp_path):
        r = np.random.default_rng(33)
        model = random_model(r, SF)
        trace = hmc_sample(model, SamplerConfig(n_chains=2, n_warmup=80,
                                                n_samples=50, seed=2))
        path = tmp_path / "t.csv"
        export_trace(trace, path)
        names, values = load_trace(path)
        in_memory = trace.split_rhat()
        for j, name in enumerate(names[: len(model.report_names)]):
            recomputed = split_rhat(values[:, :, j])
            assert recomputed == pytest.approx(in_memory[name], abs=1e-12)

    def test_positions_reconstructable_from_records(self, tmp_path):
        r = np.random.default_rng(35)
        model = random_model(r, SPARSE_MF)
        trace = hmc_sample(model, SamplerConfig(n_chains=1, n_warmup=40,
                                                n_samples=10, seed=4))
        path = tmp_path / "t.csv"
        export_trace(trace, path)
        names, values = load_trace(path)
        rebuilt = model.positions_from_records(names, values)
        np.testing.assert_allclose(rebuilt, trace.positions, rtol=1e-15,
                                   atol=1e-15)
