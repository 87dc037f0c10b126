import numpy as np
import pytest

from subnetmle.errors import ChannelError, DivergenceError
from subnetmle.network import ArmaxParams, NetworkModel, Topology
from subnetmle.simulate import (
    RngSpec,
    draw_inputs,
    draw_noise,
    simulate_dense_oracle,
    simulate_equivalent,
    simulate_recursive,
)
from subnetmle.toeplitz import MONIC, STRICTLY_DELAYED, apply, from_polynomial, solve_unit_lower


def random_network(rng, m=3, q=2, max_order=3, coeff_scale=0.5):
    systems = []
    for _ in range(m):
        na, nb, nc = rng.integers(0, max_order + 1, size=3)
        systems.append(
            ArmaxParams(
                a=rng.uniform(-coeff_scale, coeff_scale, size=na),
                b=rng.uniform(-coeff_scale, coeff_scale, size=nb),
                c=rng.uniform(-coeff_scale, coeff_scale, size=nc),
                noise_var=float(rng.uniform(0.01, 0.1)),
            )
        )
    ups = (rng.random((m, m)) < 0.4).astype(float) * rng.choice([-1.0, 1.0], (m, m))
    np.fill_diagonal(ups, 0.0)
    omega = (rng.random((m, q)) < 0.6).astype(float) * rng.choice([-1.0, 1.0], (m, q))
    topology = Topology(m=m, q=q, upsilon=ups, omega=omega)
    return NetworkModel(topology=topology, systems=tuple(systems))


class TestDraws:
    def test_noise_is_deterministic(self, demo_model):
        e1 = draw_noise(demo_model, 64, seed=42)
        e2 = draw_noise(demo_model, 64, seed=42)
        np.testing.assert_array_equal(e1, e2)

    def test_noise_variance_matches(self, demo_model):
        n = 100_000
        e = draw_noise(demo_model, n, seed=1)
        var = e[0].var()
        se = 0.01 * np.sqrt(2.0 / n)
        assert abs(var - 0.01) < 3 * se

    def test_gaussian_sigma_zero_gives_zeros(self):
        r = draw_inputs(2, 50, RngSpec(seed=3, input_law="gaussian", sigma=0.0))
        assert np.array_equal(r, np.zeros((2, 50)))

    def test_rademacher_values_and_mean(self):
        n = 100_000
        r = draw_inputs(1, n, RngSpec(seed=9))
        assert set(np.unique(r)) == {-1.0, 1.0}
        assert abs(r.mean()) < 3.0 / np.sqrt(n)

    def test_file_backed_inputs(self, tmp_path):
        data = np.arange(12.0).reshape(3, 4)
        path = tmp_path / "r.csv"
        np.savetxt(path, data, delimiter=",")
        r = draw_inputs(3, 4, RngSpec(input_law="file", path=str(path)))
        np.testing.assert_array_equal(r, data)

    def test_file_law_requires_path(self):
        with pytest.raises(ChannelError):
            draw_inputs(1, 4, RngSpec(input_law="file"))


class TestSimulateRecursive:
    def test_zero_inputs_zero_noise(self, demo_model):
        r = np.zeros((3, 32))
        e = np.zeros((7, 32))
        sig = simulate_recursive(demo_model, r, e)
        assert np.array_equal(sig.y, np.zeros((7, 32)))
        assert np.array_equal(sig.u, np.zeros((7, 32)))

    def test_pure_delay_single_system(self):
        # y_k = u_{k-1} + e_k with u = r
        sys1 = ArmaxParams(a=[], b=[1.0], c=[], noise_var=1.0)
        topo = Topology(m=1, q=1, upsilon=np.zeros((1, 1)), omega=np.ones((1, 1)))
        model = NetworkModel(topology=topo, systems=(sys1,))
        rng = np.random.default_rng(5)
        r = rng.normal(size=(1, 16))
        e = rng.normal(size=(1, 16))
        sig = simulate_recursive(model, r, e)
        expected = e[0].copy()
        expected[1:] += r[0, :-1]
        np.testing.assert_allclose(sig.y[0], expected, rtol=1e-13)

    def test_matches_dense_oracle_on_demo(self, demo_model):
        r = draw_inputs(3, 48, RngSpec(seed=2))
        e = draw_noise(demo_model, 48, seed=3)
        rec = simulate_recursive(demo_model, r, e)
        oracle = simulate_dense_oracle(demo_model, r, e)
        scale = np.abs(oracle.y).max()
        np.testing.assert_allclose(rec.y, oracle.y, atol=1e-8 * scale)
        np.testing.assert_allclose(rec.u, oracle.u, atol=1e-8 * scale)

    def test_divergence_error_names_sample(self):
        unstable = ArmaxParams(a=[-2.0], b=[], c=[], noise_var=1.0)
        topo = Topology(m=1, q=0, upsilon=np.zeros((1, 1)), omega=np.zeros((1, 0)))
        model = NetworkModel(topology=topo, systems=(unstable,))
        e = np.ones((1, 100))
        with pytest.raises(DivergenceError) as err:
            simulate_recursive(model, np.zeros((0, 100)), e)
        assert err.value.sample is not None
        assert 30 < err.value.sample <= 100

    def test_superposition(self, demo_model):
        r = draw_inputs(3, 40, RngSpec(seed=4))
        e = draw_noise(demo_model, 40, seed=5)
        both = simulate_recursive(demo_model, r, e)
        only_r = simulate_recursive(demo_model, r, np.zeros_like(e))
        only_e = simulate_recursive(demo_model, np.zeros_like(r), e)
        scale = np.abs(both.y).max()
        np.testing.assert_allclose(
            both.y, only_r.y + only_e.y, atol=1e-10 * scale
        )


class TestDenseOracleAgreement:
    def test_random_networks(self):
        rng = np.random.default_rng(12)
        for _ in range(12):
            m = int(rng.integers(1, 5))
            model = random_network(rng, m=m, q=int(rng.integers(1, 3)))
            n = int(rng.integers(8, 65))
            r = rng.normal(size=(model.topology.q, n))
            e = rng.normal(size=(m, n)) * 0.3
            rec = simulate_recursive(model, r, e)
            oracle = simulate_dense_oracle(model, r, e)
            scale = max(1.0, np.abs(oracle.y).max())
            np.testing.assert_allclose(rec.y, oracle.y, atol=1e-8 * scale)
            np.testing.assert_allclose(rec.u, oracle.u, atol=1e-8 * scale)

    def test_single_system_open_loop_closed_form(self):
        # M=1 open loop: y = Ta^{-1} (Tb u + Tc e) with u = r
        rng = np.random.default_rng(21)
        params = ArmaxParams(a=[0.4, -0.2], b=[0.7, 0.1], c=[0.5], noise_var=1.0)
        topo = Topology(m=1, q=1, upsilon=np.zeros((1, 1)), omega=np.ones((1, 1)))
        model = NetworkModel(topology=topo, systems=(params,))
        n = 40
        r = rng.normal(size=(1, n))
        e = rng.normal(size=(1, n))
        sig = simulate_dense_oracle(model, r, e)
        ta = from_polynomial(MONIC, params.a, n)
        tb = from_polynomial(STRICTLY_DELAYED, params.b, n)
        tc = from_polynomial(MONIC, params.c, n)
        y_expected = solve_unit_lower(ta, apply(tb, r[0]) + apply(tc, e[0]))
        np.testing.assert_allclose(sig.y[0], y_expected, rtol=1e-9, atol=1e-11)


class TestSimulateEquivalent:
    def test_restriction_matches_full_network(self, demo_model, demo_eq):
        n = 500
        r = draw_inputs(3, n, RngSpec(seed=17))
        e = draw_noise(demo_model, n, seed=23)
        full = simulate_recursive(demo_model, r, e)
        r_tilde = np.vstack([r[0], r[1], full.y[5]])
        params_a = [demo_model.systems[i] for i in (0, 1, 2)]
        y_a, u_a = simulate_equivalent(params_a, demo_eq, r_tilde, e[:3])
        scale = np.abs(full.y[:3]).max()
        np.testing.assert_allclose(y_a, full.y[:3], atol=1e-10 * scale)
        np.testing.assert_allclose(u_a, full.u[:3], atol=1e-10 * scale)

    def test_zero_in_zero_out(self, demo_model, demo_eq):
        params_a = [demo_model.systems[i] for i in (0, 1, 2)]
        y_a, u_a = simulate_equivalent(
            params_a, demo_eq, np.zeros((3, 16)), np.zeros((3, 16))
        )
        assert np.array_equal(y_a, np.zeros((3, 16)))
        assert np.array_equal(u_a, np.zeros((3, 16)))

    def test_dict_channels_and_missing_channel_error(self, demo_model, demo_eq):
        params_a = [demo_model.systems[i] for i in (0, 1, 2)]
        n = 8
        channels = {"r1": np.zeros(n), "r2": np.zeros(n), "y6": np.zeros(n)}
        y_a, _ = simulate_equivalent(params_a, demo_eq, channels, np.zeros((3, n)))
        assert y_a.shape == (3, n)
        del channels["y6"]
        with pytest.raises(ChannelError):
            simulate_equivalent(params_a, demo_eq, channels, np.zeros((3, n)))

    def test_no_separator_single_system_open_loop(self):
        from subnetmle.network import EquivalentSubnetwork

        params = [ArmaxParams(a=[0.3], b=[1.0], c=[], noise_var=1.0)]
        eq = EquivalentSubnetwork(
            upsilon_bar_a=np.zeros((1, 1)),
            omega_tilde_a=np.ones((1, 1)),
            r_channels=(("r", 1),),
            ml_mode="true_ml",
            set_a=(1,),
        )
        rng = np.random.default_rng(2)
        n = 24
        r = rng.normal(size=(1, n))
        e = rng.normal(size=(1, n))
        y, u = simulate_equivalent(params, eq, r, e)
        ta = from_polynomial(MONIC, [0.3], n)
        tb = from_polynomial(STRICTLY_DELAYED, [1.0], n)
        expected = solve_unit_lower(ta, apply(tb, r[0]) + e[0])
        np.testing.assert_allclose(y[0], expected, rtol=1e-10)
