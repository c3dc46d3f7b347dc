import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy import trapezoid

from quantfilt import (
    GaussianMixture,
    LinearSSM,
    MixtureParams,
    backward_init,
    backward_measure,
    backward_predict,
    backward_step,
    canonical_to_moment,
    gl_rule,
    gsf_filter,
    gsf_step,
    gss_combine_step,
    gss_smoother,
    kf_filter,
    likelihood_mixture_params,
    mixture_likelihood,
    mixture_reduce,
    moment_to_canonical,
    rts_smoother,
    simulate_trajectory,
)
from quantfilt.gsf import ReducedBackward, _canonical_to_moment_batch
from oracles import grid_filter, grid_smoother


def _random_mixture(rng, count, n):
    w = rng.random(count) + 0.05
    w /= w.sum()
    means = rng.standard_normal((count, n)) * 2.0
    covs = np.empty((count, n, n))
    for k in range(count):
        root = rng.standard_normal((n, n)) * 0.5
        covs[k] = root @ root.T + 0.2 * np.eye(n)
    return GaussianMixture(w, means, covs)


class TestMixtureReduce:
    def test_noop_when_under_target(self):
        rng = np.random.default_rng(0)
        mix = _random_mixture(rng, 4, 1)
        out = mixture_reduce(mix, 4)
        np.testing.assert_array_equal(out.weights, mix.weights)
        np.testing.assert_array_equal(out.means, mix.means)
        np.testing.assert_array_equal(out.covs, mix.covs)

    def test_duplicate_components_merge_to_one(self):
        mix = GaussianMixture(
            [0.5, 0.5], [[1.3], [1.3]], np.array([[[0.7]], [[0.7]]])
        )
        out = mixture_reduce(mix, 1)
        assert len(out) == 1
        assert out.weights[0] == pytest.approx(1.0)
        assert out.means[0, 0] == pytest.approx(1.3)
        assert out.covs[0, 0, 0] == pytest.approx(0.7)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 2))
    @settings(max_examples=40, deadline=None)
    def test_moments_preserved(self, seed, n):
        rng = np.random.default_rng(seed)
        count = int(rng.integers(3, 14))
        mix = _random_mixture(rng, count, n)
        target = int(rng.integers(1, count))
        out = mixture_reduce(mix, target)
        assert len(out) <= target
        np.testing.assert_allclose(out.mean(), mix.mean(), atol=1e-10)
        np.testing.assert_allclose(out.cov(), mix.cov(), atol=1e-10)
        assert out.weights.sum() == pytest.approx(mix.weights.sum(), abs=1e-12)

    def test_prunes_negligible_weights(self):
        mix = GaussianMixture(
            [1.0 - 1e-13, 1e-13], [[0.0], [50.0]], np.array([[[1.0]], [[1.0]]])
        )
        out = mixture_reduce(mix, 1)
        assert len(out) == 1
        assert out.means[0, 0] == pytest.approx(0.0, abs=1e-10)


class TestGsfStep:
    def test_single_node_is_kalman_update(self, scalar_model):
        # one likelihood component with unit scale behaves like a KF
        # update against pseudo-observation eta with a shifted offset
        prior = GaussianMixture([1.0], [[0.8]], np.array([[[0.4]]]))
        params = MixtureParams(
            scale=np.array([1.0]), eta=np.array([2.5]), shift=np.array([-1.0])
        )
        u = np.array([0.3])
        post, pred = gsf_step(prior, 0.0, u, scalar_model, params, 10)
        C, D, R = 2.2, 0.75, 0.5
        V = C * 0.4 * C + R
        K = 0.4 * C / V
        kappa = C * 0.8 + D * 0.3 - 1.0
        want_mean = 0.8 + K * (2.5 - kappa)
        want_var = (1 - K * C) * 0.4
        assert len(post) == 1
        assert post.means[0, 0] == pytest.approx(want_mean, rel=1e-12)
        assert post.covs[0, 0, 0] == pytest.approx(want_var, rel=1e-12)
        assert pred.means[0, 0] == pytest.approx(0.9 * want_mean + 1.2 * 0.3)
        assert pred.covs[0, 0, 0] == pytest.approx(1.0 + 0.81 * want_var)

    def test_posterior_weights_normalized(self, scalar_model, step8):
        rng = np.random.default_rng(1)
        prior = _random_mixture(rng, 6, 1)
        params = likelihood_mixture_params(0.0, step8, gl_rule(10))
        post, pred = gsf_step(prior, 0.0, np.zeros(1), scalar_model, params, 50)
        assert post.weights.sum() == pytest.approx(1.0, abs=1e-10)
        assert pred.weights.sum() == pytest.approx(1.0, abs=1e-10)

    def test_underflow_fallback_keeps_one_component(self, scalar_model, step8):
        prior = GaussianMixture([1.0], [[0.0]], np.array([[[1e-8]]]))
        params = likelihood_mixture_params(8000.0, step8, gl_rule(10))
        post, _ = gsf_step(prior, 8000.0, np.zeros(1), scalar_model, params, 10)
        assert len(post) >= 1
        assert np.isfinite(post.means).all()
        assert post.weights.sum() == pytest.approx(1.0)

    def test_one_step_matches_grid_bayes(self, scalar_model, step8):
        # wide prior so several quadrature components matter
        prior = GaussianMixture([1.0], [[0.5]], np.array([[[4.0]]]))
        params = likelihood_mixture_params(8.0, step8, gl_rule(10))
        post, _ = gsf_step(prior, 8.0, np.array([0.2]), scalar_model, params, 50)

        xg = np.linspace(-20, 20, 400001)
        from quantfilt import exact_likelihood

        dens = np.exp(-0.5 * (xg - 0.5) ** 2 / 4.0)
        lik = exact_likelihood(8.0, xg[:, None], np.array([0.2]), scalar_model, step8)
        posterior = dens * lik
        posterior /= trapezoid(posterior, xg)
        mean_g = trapezoid(xg * posterior, xg)
        var_g = trapezoid((xg - mean_g) ** 2 * posterior, xg)
        assert post.mean()[0] == pytest.approx(mean_g, abs=1e-3)
        assert post.cov()[0, 0] == pytest.approx(var_g, abs=1e-3)


class TestGsfFilterVsGrid:
    def test_filter_tracks_grid_recursion(self, scalar_model, step8):
        rng = np.random.default_rng(11)
        u = rng.standard_normal(15)
        traj = simulate_trajectory(scalar_model, step8, u, rng)
        res = gsf_filter(scalar_model, step8, u, traj.y, max_components=50)
        gm, gv, _ = grid_filter(scalar_model, step8, u, traj.y)
        np.testing.assert_allclose(res.filtered_means[:, 0], gm, atol=1e-3)
        np.testing.assert_allclose(res.filtered_covs[:, 0, 0], gv, atol=1e-3)

    def test_reduction_to_kf_with_linear_seam(self, scalar_model, step8):
        # single exact observation component and max_components = 1:
        # every step is an exact Kalman update
        rng = np.random.default_rng(12)
        u = rng.standard_normal(25)
        traj = simulate_trajectory(scalar_model, step8, u, rng)

        def linear_params(t, y_t):
            return MixtureParams(
                scale=np.array([1.0]), eta=np.array([traj.z[t]]), shift=np.array([0.0])
            )

        res = gsf_filter(scalar_model, step8, u, traj.y, max_components=1,
                         params_fn=linear_params)
        kf = kf_filter(scalar_model, u, traj.z)
        np.testing.assert_allclose(res.filtered_means, kf.filtered_means, atol=1e-8)
        np.testing.assert_allclose(
            np.stack([g.cov() for g in res.filtered]), kf.filtered_covs, atol=1e-8
        )
        # and the smoother collapses to RTS
        sm = gss_smoother(res, scalar_model, u, s_max=1)
        rts_m, rts_c = rts_smoother(scalar_model, kf)
        np.testing.assert_allclose(
            np.stack([g.mean() for g in sm]), rts_m, atol=1e-8
        )
        np.testing.assert_allclose(
            np.stack([g.cov() for g in sm]), rts_c, atol=1e-8
        )


class TestBackward:
    def test_init_values(self, scalar_model, step8):
        params = likelihood_mixture_params(8.0, step8, gl_rule(10))
        bm = backward_init(params, np.array([0.4]), scalar_model)
        np.testing.assert_allclose(bm.F[:, 0, 0], 2.2**2 / 0.5)  # 9.68
        np.testing.assert_allclose(bm.log_lam, -0.5 * np.log(2 * np.pi * 0.5))
        np.testing.assert_array_equal(bm.eps, params.scale)
        theta = params.eta - 0.75 * 0.4 - params.shift
        np.testing.assert_allclose(bm.G[:, 0], theta * 2.2 / 0.5)
        np.testing.assert_allclose(bm.H, theta**2 / 0.5)

    def test_measurement_weights_are_products(self, scalar_model, step8):
        params = likelihood_mixture_params(0.0, step8, gl_rule(5))
        bm = backward_init(params, np.zeros(1), scalar_model)
        out = backward_measure(bm, params, np.zeros(1), scalar_model)
        expected = (bm.eps[:, None] * params.scale[None, :]).reshape(-1)
        np.testing.assert_array_equal(out.eps, expected)

    def test_canonical_to_moment_standard_quadratic(self):
        delta, z, U = canonical_to_moment(1.0, 0.0, np.array([[1.0]]), np.array([0.0]), 0.0)
        assert delta == pytest.approx(np.sqrt(2 * np.pi))
        assert z[0] == 0.0
        assert U[0, 0] == pytest.approx(1.0)

    def test_moment_canonical_round_trip(self):
        rng = np.random.default_rng(3)
        log_delta = rng.standard_normal(6)
        z = rng.standard_normal((6, 2))
        U = np.empty((6, 2, 2))
        for k in range(6):
            root = rng.standard_normal((2, 2))
            U[k] = root @ root.T + 0.3 * np.eye(2)
        red = ReducedBackward(log_delta=log_delta, z=z, U=U)
        back = _canonical_to_moment_batch(moment_to_canonical(red))
        np.testing.assert_allclose(back.log_delta, log_delta, atol=1e-10)
        np.testing.assert_allclose(back.z, z, atol=1e-10)
        np.testing.assert_allclose(back.U, U, atol=1e-10)

    def test_canonical_to_moment_pointwise(self):
        rng = np.random.default_rng(4)
        F = np.array([[2.0, 0.3], [0.3, 1.5]])
        G = np.array([0.4, -0.7])
        eps, log_lam, H = 0.8, -0.3, 0.9
        delta, z, U = canonical_to_moment(eps, log_lam, F, G, H)
        Uinv = np.linalg.inv(U)
        for _ in range(10):
            x = rng.standard_normal(2)
            canonical = eps * np.exp(log_lam - 0.5 * (x @ F @ x - 2 * G @ x + H))
            dens = np.exp(-0.5 * (x - z) @ Uinv @ (x - z)) / (
                2 * np.pi * np.sqrt(np.linalg.det(U))
            )
            assert delta * dens == pytest.approx(canonical, rel=1e-10)

    def test_singular_f_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            canonical_to_moment(1.0, 0.0, np.array([[1.0, 1.0], [1.0, 1.0]]),
                                np.array([0.0, 0.0]), 0.0)

    def _nested_quadrature(self, model, spec, rule, y_seq, u_seq, xs, use_exact):
        """p(y_{t:N} | x_t) for a two-step record by 1-D grid integration."""
        from quantfilt import exact_likelihood

        a = float(model.A[0, 0])
        b = float(model.B[0, 0])
        q = float(model.Q[0, 0])

        def lik(y, xv, u_t):
            if use_exact:
                return exact_likelihood(y, xv[:, None], np.array([u_t]), model, spec)
            params = likelihood_mixture_params(y, spec, rule)
            return mixture_likelihood(params, model.C[0] * xv + model.D[0] * u_t, model.R)

        out = []
        grid = np.linspace(-60, 60, 240001)
        lik_next = lik(y_seq[1], grid, u_seq[1])
        for x in xs:
            mean = a * x + b * u_seq[0]
            trans = np.exp(-0.5 * (grid - mean) ** 2 / q) / np.sqrt(2 * np.pi * q)
            integral = trapezoid(trans * lik_next, grid)
            out.append(lik(y_seq[0], np.array([x]), u_seq[0])[0] * integral)
        return np.array(out)

    def test_backward_matches_nested_quadrature_of_mixture(self, scalar_model, step8):
        # recursion algebra check: against the quadrature of the same
        # Gauss-Legendre measurement mixture, agreement is tight
        rule = gl_rule(10)
        y_seq = [0.0, 8.0]
        u_seq = [0.3, -0.5]
        bm = backward_init(likelihood_mixture_params(y_seq[1], step8, rule),
                           np.array([u_seq[1]]), scalar_model)
        red, bm_next = backward_step(
            bm, np.array([u_seq[0]]), scalar_model,
            likelihood_mixture_params(y_seq[0], step8, rule), s_max=1000,
        )
        xs = np.linspace(-4.0, 4.0, 9)
        want = self._nested_quadrature(scalar_model, step8, rule, y_seq, u_seq, xs,
                                       use_exact=False)
        got = bm_next.value(xs[:, None])
        np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_backward_matches_exact_chain_in_resolved_regime(self, step8):
        # against the exact CDF chain the residual error is the K = 10
        # quadrature error, which sits below 1e-4 once R ~ 2.5
        model = LinearSSM(A=0.9, B=1.2, C=2.2, D=0.75, Q=1.0, R=2.5, mu1=1.0, P1=0.01)
        rule = gl_rule(10)
        y_seq = [8.0, 0.0]
        u_seq = [-0.2, 0.7]
        bm = backward_init(likelihood_mixture_params(y_seq[1], step8, rule),
                           np.array([u_seq[1]]), model)
        _, bm_next = backward_step(
            bm, np.array([u_seq[0]]), model,
            likelihood_mixture_params(y_seq[0], step8, rule), s_max=1000,
        )
        xs = np.linspace(-2.0, 6.0, 9)
        want = self._nested_quadrature(model, step8, rule, y_seq, u_seq, xs,
                                       use_exact=True)
        got = bm_next.value(xs[:, None])
        np.testing.assert_allclose(got, want, rtol=1e-4)

    def test_components_order_invariant(self, scalar_model, step8):
        rule = gl_rule(6)
        params_n = likelihood_mixture_params(8.0, step8, rule)
        params_t = likelihood_mixture_params(0.0, step8, rule)
        bm = backward_init(params_n, np.array([0.1]), scalar_model)
        perm = np.random.default_rng(5).permutation(len(bm))
        bm_perm = type(bm)(eps=bm.eps[perm], log_lam=bm.log_lam[perm],
                           F=bm.F[perm], G=bm.G[perm], H=bm.H[perm])
        pred = GaussianMixture([0.4, 0.6], [[0.0], [1.0]],
                               np.array([[[1.0]], [[0.5]]]))
        out1 = []
        out2 = []
        for source, sink in ((bm, out1), (bm_perm, out2)):
            red, _ = backward_step(source, np.array([0.2]), scalar_model, params_t, 1000)
            mix = gss_combine_step(pred, red)
            sink.append(mix.mean())
            sink.append(mix.cov())
        np.testing.assert_allclose(out1[0], out2[0], atol=1e-12)
        np.testing.assert_allclose(out1[1], out2[1], atol=1e-12)

    def test_requires_positive_definite_q(self, step8):
        model = LinearSSM(A=0.9, B=1.0, C=1.0, D=0.0, Q=0.0, R=0.5, mu1=0.0, P1=1.0)
        params = likelihood_mixture_params(0.0, step8, gl_rule(3))
        bm = backward_init(params, np.zeros(1), model)
        with pytest.raises(ValueError, match="positive definite Q"):
            backward_predict(bm, np.zeros(1), model)

    def test_non_normalizable_components_bypass_reduction(self, model_2d, step8):
        # a zero-information component stays rank deficient after one
        # backward iteration (the measurement adds only a rank-1 term);
        # it must be carried verbatim instead of entering moment space
        from quantfilt import BackwardMixture

        params = likelihood_mixture_params(0.0, step8, gl_rule(2))
        bm = BackwardMixture(
            eps=np.array([1.0, 1.0]),
            log_lam=np.zeros(2),
            F=np.stack([np.eye(2), np.zeros((2, 2))]),
            G=np.zeros((2, 2)),
            H=np.zeros(2),
        )
        red, nxt = backward_step(bm, np.zeros(1), model_2d, params, s_max=50)
        assert len(red) == 2 * params.order - params.order  # only the PD parent's children
        assert len(nxt) == len(red) + params.order  # plus the verbatim singular ones

    def test_unobservable_direction_raises_cleanly(self, step8):
        # C aligned with an A-invariant direction: every backward component
        # stays singular and the smoother cannot run
        model = LinearSSM(
            A=0.9 * np.eye(2), B=np.ones((2, 1)), C=[1.0, 0.0], D=[0.0],
            Q=np.eye(2), R=0.5, mu1=np.zeros(2), P1=np.eye(2),
        )
        params = likelihood_mixture_params(0.0, step8, gl_rule(2))
        bm = backward_init(params, np.zeros(1), model)
        with pytest.raises(ValueError, match="normalizable"):
            backward_step(bm, np.zeros(1), model, params, s_max=10)


class TestCombine:
    def test_single_component_product_of_gaussians(self):
        # fusing one backward Gaussian with one predicted Gaussian is the
        # standard information-form product
        z, Uv = 1.2, 0.6
        m, Pv = -0.4, 1.5
        red = ReducedBackward(log_delta=np.array([0.0]), z=np.array([[z]]),
                              U=np.array([[[Uv]]]))
        pred = GaussianMixture([1.0], [[m]], np.array([[[Pv]]]))
        mix = gss_combine_step(pred, red)
        L = 1 / Uv + 1 / Pv
        want_mean = (z / Uv + m / Pv) / L
        assert len(mix) == 1
        assert mix.means[0, 0] == pytest.approx(want_mean, rel=1e-10)
        assert mix.covs[0, 0, 0] == pytest.approx(1 / L, rel=1e-10)
        assert mix.weights[0] == pytest.approx(1.0)

    def test_smoother_anchors_at_filtered(self, scalar_model, step8):
        rng = np.random.default_rng(6)
        u = rng.standard_normal(6)
        traj = simulate_trajectory(scalar_model, step8, u, rng)
        res = gsf_filter(scalar_model, step8, u, traj.y, max_components=8)
        sm = gss_smoother(res, scalar_model, u, s_max=5)
        assert sm[-1] is res.filtered[-1]

    def test_n3_matches_grid_smoother(self, scalar_model, step8):
        rng = np.random.default_rng(7)
        u = rng.standard_normal(3)
        traj = simulate_trajectory(scalar_model, step8, u, rng)
        res = gsf_filter(scalar_model, step8, u, traj.y, max_components=50)
        sm = gss_smoother(res, scalar_model, u, s_max=10)
        gm, gv = grid_smoother(scalar_model, step8, u, traj.y)
        for t in range(3):
            assert sm[t].mean()[0] == pytest.approx(gm[t], abs=1e-3)
            assert sm[t].cov()[0, 0] == pytest.approx(gv[t], abs=1e-3)

    def test_combine_weights_normalized(self, scalar_model, step8):
        rng = np.random.default_rng(8)
        u = rng.standard_normal(10)
        traj = simulate_trajectory(scalar_model, step8, u, rng)
        res = gsf_filter(scalar_model, step8, u, traj.y, max_components=6)
        for mix in gss_smoother(res, scalar_model, u, s_max=4):
            assert mix.weights.sum() == pytest.approx(1.0, abs=1e-10)
