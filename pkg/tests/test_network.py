import numpy as np
import pytest

from restopo.ancre import AncreParams, candidate_pairs
from restopo.network import (ForwardTrace, Topology, TrainState, backward,
                             end_to_end_map, forward, loss, loss_and_gradients)
from restopo.oracles import fd_gradient, pack_state
from restopo.tensor import ShapeError, make_rng, random_orthogonal_data


def make_state(K=3, d=4, n=6, seed=0, topology=None, ancre=None, nonlinearity="none",
               scale=0.4, trunk=True):
    rng = make_rng(seed)
    weights = [rng.standard_normal((d, d)) * scale / np.sqrt(d) for _ in range(K)]
    X = random_orthogonal_data(d, n, seed + 1)
    Y = rng.standard_normal((d, n))
    if topology is None and ancre is None:
        topology = Topology.none(K)
    return TrainState(weights=weights, X=X, Y=Y, topology=topology, ancre=ancre,
                      nonlinearity=nonlinearity, trunk=trunk)


class TestTopology:
    def test_rejects_bad_pair(self):
        with pytest.raises(ValueError):
            Topology(K=3, shortcuts=frozenset({(2, 2)}))
        with pytest.raises(ValueError):
            Topology(K=3, shortcuts=frozenset({(0, 4)}))

    def test_labels(self):
        assert Topology.none(3).label() == "none"
        assert Topology.cascaded(3).label() == "cascaded"
        assert Topology(K=4, shortcuts=frozenset({(0, 1), (2, 4)})).label() == "0:1+2:4"


class TestForward:
    def test_shortcut_0_1_factorization(self):
        st = make_state(topology=Topology.single(0, 1, 3))
        out, _ = forward(st)
        W1, W2, W3 = st.weights
        want = W3 @ W2 @ (W1 + np.eye(st.d)) @ st.X
        np.testing.assert_allclose(out, want, atol=1e-13)

    def test_shortcut_0_2_factorization(self):
        st = make_state(topology=Topology.single(0, 2, 3))
        out, _ = forward(st)
        W1, W2, W3 = st.weights
        want = W3 @ (W2 @ W1 + np.eye(st.d)) @ st.X
        np.testing.assert_allclose(out, want, atol=1e-13)

    def test_zero_weights_passthrough(self):
        st = make_state(topology=Topology.single(0, 3, 3))
        st.weights = [np.zeros((st.d, st.d)) for _ in range(3)]
        out, _ = forward(st)
        np.testing.assert_array_equal(out, st.X)

    def test_cascaded_product_form(self):
        st = make_state(topology=Topology.cascaded(3))
        out, _ = forward(st)
        I = np.eye(st.d)
        W1, W2, W3 = st.weights
        want = (W3 + I) @ (W2 + I) @ (W1 + I) @ st.X
        np.testing.assert_allclose(out, want, atol=1e-12)

    def test_linearity_in_input(self):
        for topo in (Topology.none(3), Topology.cascaded(3), Topology.single(0, 2, 3)):
            st = make_state(topology=topo)
            out1, _ = forward(st)
            st2 = TrainState(weights=st.weights, X=2.5 * st.X, Y=st.Y, topology=topo)
            out2, _ = forward(st2)
            np.testing.assert_allclose(out2, 2.5 * out1, atol=1e-12)

    def test_trace_contents(self):
        st = make_state(K=2, topology=Topology.cascaded(2))
        _, trace = forward(st)
        assert len(trace.hidden) == 3
        np.testing.assert_array_equal(trace.hidden[0], st.X)
        assert trace.mix_inputs is None and trace.coeffs is None

    def test_rejects_nonfinite_weights(self):
        st = make_state()
        st.weights[1][0, 0] = np.nan
        with pytest.raises(ValueError, match="layer 2"):
            forward(st)


class TestEndToEndMap:
    def test_plain_product(self):
        st = make_state(K=2)
        m = end_to_end_map(st.weights, Topology.none(2))
        np.testing.assert_allclose(m, st.weights[1] @ st.weights[0], atol=1e-13)

    def test_matches_factored_form_for_0_2(self):
        st = make_state(topology=Topology.single(0, 2, 3))
        m = end_to_end_map(st.weights, st.topology)
        W1, W2, W3 = st.weights
        np.testing.assert_allclose(m, W3 @ (W2 @ W1 + np.eye(st.d)), atol=1e-13)

    def test_identity_weights_cascaded_gives_8I(self):
        weights = [np.eye(3) for _ in range(3)]
        m = end_to_end_map(weights, Topology.cascaded(3))
        np.testing.assert_allclose(m, 8.0 * np.eye(3), atol=1e-13)

    def test_consistent_with_forward(self):
        st = make_state(topology=Topology(K=4, shortcuts=frozenset({(0, 2), (1, 4)})),
                        K=4)
        out, _ = forward(st)
        m = end_to_end_map(st.weights, st.topology)
        np.testing.assert_allclose(m @ st.X, out, atol=1e-12)

    def test_rejects_tanh(self):
        st = make_state()
        with pytest.raises(ValueError, match="linear"):
            end_to_end_map(st.weights, Topology.none(3), nonlinearity="tanh")


class TestLoss:
    def test_zero_residual(self):
        y = make_rng(2).standard_normal((3, 4))
        assert loss(y, y) == 0.0

    def test_hand_value(self):
        out = np.array([[3.0, 4.0], [0.0, 0.0]])
        assert loss(out, np.zeros((2, 2))) == pytest.approx(12.5)

    def test_quadratic_homogeneity(self):
        rng = make_rng(3)
        out, y = rng.standard_normal((2, 5)), rng.standard_normal((2, 5))
        base = loss(out, y)
        assert loss(y + 2.0 * (out - y), y) == pytest.approx(4.0 * base, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestBackward:
    def test_gradients_match_closed_form_0_1(self):
        st = make_state(topology=Topology.single(0, 1, 3), n=4)
        # with whitened X the gradients take the three-factor closed forms
        st = TrainState(weights=st.weights, X=np.eye(st.d),
                        Y=make_rng(5).standard_normal((st.d, st.d)),
                        topology=st.topology)
        out, trace = forward(st)
        grads = backward(st, trace)
        W1, W2, W3 = st.weights
        I = np.eye(st.d)
        E = out - st.Y
        np.testing.assert_allclose(grads.weights[0], W2.T @ W3.T @ E, atol=1e-12)
        np.testing.assert_allclose(grads.weights[1], W3.T @ E @ (W1.T + I), atol=1e-12)
        np.testing.assert_allclose(grads.weights[2], E @ (W1.T + I) @ W2.T, atol=1e-12)

    def test_gradients_match_closed_form_0_2(self):
        st = make_state(topology=Topology.single(0, 2, 3))
        st = TrainState(weights=st.weights, X=np.eye(st.d),
                        Y=make_rng(6).standard_normal((st.d, st.d)),
                        topology=st.topology)
        out, trace = forward(st)
        grads = backward(st, trace)
        W1, W2, W3 = st.weights
        I = np.eye(st.d)
        E = out - st.Y
        np.testing.assert_allclose(grads.weights[0], W2.T @ W3.T @ E, atol=1e-12)
        np.testing.assert_allclose(grads.weights[1], W3.T @ E @ W1.T, atol=1e-12)
        np.testing.assert_allclose(grads.weights[2], E @ (W2 @ W1 + I).T, atol=1e-12)

    def test_zero_residual_means_zero_gradients(self):
        st = make_state(topology=Topology.cascaded(3))
        out, trace = forward(st)
        st_fit = TrainState(weights=st.weights, X=st.X, Y=out, topology=st.topology)
        grads = backward(st_fit, forward(st_fit)[1])
        for g in grads.weights:
            np.testing.assert_allclose(g, 0.0, atol=1e-14)

    def test_stale_trace_rejected(self):
        st = make_state(topology=Topology.none(3))
        _, trace = forward(st)
        other = make_state(topology=Topology.none(3), seed=99)
        with pytest.raises(ValueError, match="stale trace"):
            backward(other, trace)

    def test_mode_mismatch_rejected(self):
        st = make_state(topology=Topology.none(2), K=2)
        _, trace = forward(st)
        st2 = TrainState(weights=st.weights, X=st.X, Y=st.Y,
                         ancre=AncreParams.uniform(2))
        with pytest.raises(ValueError, match="stale trace"):
            backward(st2, trace)


class TestFiniteDifferenceAgreement:
    @pytest.mark.parametrize("topology,nonlinearity", [
        (Topology.none(2), "none"),
        (Topology.cascaded(3), "none"),
        (Topology.single(0, 2, 3), "tanh"),
        (Topology(K=4, shortcuts=frozenset({(0, 2), (1, 4), (3, 4)})), "tanh"),
    ])
    def test_fixed_topologies(self, topology, nonlinearity):
        st = make_state(K=topology.K, topology=topology, nonlinearity=nonlinearity,
                        seed=topology.K)
        vec, evaluate, analytic = pack_state(st)
        fd = fd_gradient(evaluate, vec)
        an = analytic(vec)
        rel = np.abs(an - fd) / (np.abs(an) + np.abs(fd) + 1e-12)
        assert rel.max() <= 1e-6

    @pytest.mark.parametrize("mode,trunk,nonlinearity", [
        ("ingoing", True, "none"),
        ("ingoing", False, "none"),
        ("outgoing", True, "tanh"),
        ("ingoing", False, "tanh"),
    ])
    def test_mixing_modes(self, mode, trunk, nonlinearity):
        rng = make_rng(31)
        c = {pair: float(rng.uniform(-0.5, 0.5)) for pair in candidate_pairs(3)}
        params = AncreParams(K=3, c=c, mode=mode, temperature=0.3)
        st = make_state(K=3, ancre=params, nonlinearity=nonlinearity, trunk=trunk,
                        seed=41)
        vec, evaluate, analytic = pack_state(st)
        fd = fd_gradient(evaluate, vec)
        an = analytic(vec)
        rel = np.abs(an - fd) / (np.abs(an) + np.abs(fd) + 1e-12)
        assert rel.max() <= 1e-6


class TestMixingForward:
    def test_one_hot_rows_reproduce_cascaded(self):
        # drive each ingoing row to the cascaded source k-1; the mixing
        # recurrence then reproduces the fixed cascaded topology
        K, tau = 3, 0.1
        c = {pair: 0.0 for pair in candidate_pairs(K)}
        for k in range(1, K + 1):
            c[(k - 1, k)] = 60.0 * tau
        params = AncreParams(K=K, c=c, temperature=tau)
        st_fixed = make_state(K=K, topology=Topology.cascaded(K), seed=8)
        st_mix = TrainState(weights=st_fixed.weights, X=st_fixed.X, Y=st_fixed.Y,
                            ancre=params)
        out_fixed, _ = forward(st_fixed)
        out_mix, _ = forward(st_mix)
        np.testing.assert_allclose(out_mix, out_fixed, atol=1e-10)

    def test_uniform_rows_average_sources(self):
        params = AncreParams.uniform(2)
        st = make_state(K=2, ancre=params, seed=12)
        out, _ = forward(st)
        W1, W2 = st.weights
        h1 = W1 @ st.X + st.X
        want = W2 @ h1 + 0.5 * st.X + 0.5 * h1
        np.testing.assert_allclose(out, want, atol=1e-13)

    def test_trunk_off_routes_through_mixture(self):
        params = AncreParams.uniform(2)
        st = make_state(K=2, ancre=params, trunk=False, seed=13)
        out, trace = forward(st)
        W1, W2 = st.weights
        h1 = W1 @ st.X
        want = W2 @ (0.5 * st.X + 0.5 * h1)
        np.testing.assert_allclose(out, want, atol=1e-13)
        assert trace.mix_inputs is not None

    def test_loss_and_gradients_matches_forward_backward(self):
        params = AncreParams.uniform(3)
        st = make_state(K=3, ancre=params, seed=21)
        out, trace = forward(st)
        grads = backward(st, trace)
        value, wgrads, cgrads = loss_and_gradients(st)
        assert value == pytest.approx(loss(out, st.Y), rel=1e-15)
        for a, b in zip(grads.weights, wgrads):
            np.testing.assert_array_equal(a, b)
        assert grads.coeffs == cgrads


class TestTrainStateValidation:
    def test_requires_exactly_one_layout(self):
        st = make_state()
        with pytest.raises(ValueError, match="exactly one layout"):
            TrainState(weights=st.weights, X=st.X, Y=st.Y)
        with pytest.raises(ValueError, match="exactly one layout"):
            TrainState(weights=st.weights, X=st.X, Y=st.Y,
                       topology=Topology.none(3), ancre=AncreParams.uniform(3))

    def test_depth_mismatch(self):
        st = make_state()
        with pytest.raises(ValueError, match="depth"):
            TrainState(weights=st.weights, X=st.X, Y=st.Y, topology=Topology.none(4))

    def test_layer_shape_mismatch_reports_index(self):
        st = make_state()
        weights = [w.copy() for w in st.weights]
        weights[2] = np.zeros((3, 5))
        with pytest.raises(ShapeError, match="layer 3"):
            TrainState(weights=weights, X=st.X, Y=st.Y, topology=Topology.none(3))
