"""Spiking-core unit tests: dynamics, surrogate, backward, oracles."""

import numpy as np
import pytest

from spikekit import (
    LifParams,
    heaviside,
    lif_backward,
    lif_forward,
    lif_forward_smooth,
    lif_run,
    surrogate_grad,
    surrogate_integral,
)


def scalar_loop_oracle(x: np.ndarray, p: LifParams):
    """Element-wise scalar simulation in the input dtype, for bit-exact checks."""
    dt = x.dtype.type
    th, beta = dt(p.u_th), dt(p.beta)
    v_reset, one = dt(p.v_reset), dt(1.0)
    flat = x.reshape(x.shape[0], -1)
    spikes = np.empty_like(flat)
    membranes = np.empty_like(flat)
    h_final = np.empty(flat.shape[1], dtype=x.dtype)
    for j in range(flat.shape[1]):
        h = dt(0.0)
        for t in range(flat.shape[0]):
            u = h + flat[t, j]
            s = one if u >= th else dt(0.0)
            h = v_reset * s + (beta * u) * (one - s)
            membranes[t, j] = u
            spikes[t, j] = s
        h_final[j] = h
    return (
        spikes.reshape(x.shape),
        membranes.reshape(x.shape),
        h_final.reshape(x.shape[1:]),
    )


class TestLifParams:
    def test_defaults_valid(self):
        p = LifParams()
        assert p.u_th == 1.0 and p.beta == 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"beta": 0.0},
            {"beta": 1.0},
            {"beta": -0.3},
            {"u_th": 0.0, "v_reset": 0.0},
            {"u_th": -1.0, "v_reset": 0.5},
            {"surrogate_width": 0.0},
            {"surrogate_width": -1.0},
            {"u_th": float("nan")},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LifParams(**kwargs)


class TestHeaviside:
    def test_negative(self):
        assert heaviside(-0.1) == 0.0

    def test_zero_fires(self):
        assert heaviside(0.0) == 1.0

    def test_positive(self):
        assert heaviside(2.5) == 1.0

    def test_array(self):
        out = heaviside(np.array([-1.0, 0.0, 0.5]))
        assert out.tolist() == [0.0, 1.0, 1.0]

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            heaviside(float("nan"))
        with pytest.raises(ValueError):
            heaviside(np.array([1.0, np.inf]))


class TestSurrogate:
    def test_center(self):
        assert surrogate_grad(0.0, 0.5) == 1.0

    def test_outside(self):
        assert surrogate_grad(0.6, 0.5) == 0.0

    def test_near_edge_inside(self):
        # constant window value anywhere strictly inside the support
        assert surrogate_grad(0.49, 0.5) == 1.0

    def test_closed_support(self):
        assert surrogate_grad(0.5, 0.5) == 1.0
        assert surrogate_grad(-0.5, 0.5) == 1.0

    @pytest.mark.parametrize("width", [0.0, -0.1])
    def test_bad_width(self, width):
        with pytest.raises(ValueError):
            surrogate_grad(0.0, width)

    def test_integral_matches_window(self):
        # central differences of the integral reproduce the window away from edges
        xs = np.linspace(-1.2, 1.2, 241)
        xs = xs[np.abs(np.abs(xs) - 0.5) > 1e-3]
        h = 1e-6
        fd = (surrogate_integral(xs + h, 0.5) - surrogate_integral(xs - h, 0.5)) / (2 * h)
        np.testing.assert_allclose(fd, surrogate_grad(xs, 0.5), atol=1e-9)

    def test_integral_range(self):
        assert surrogate_integral(-0.5, 0.5) == 0.0
        assert surrogate_integral(0.5, 0.5) == 1.0
        assert surrogate_integral(0.0, 0.5) == 0.5


class TestLifForward:
    def test_zero_input_never_fires(self):
        spikes, h = lif_forward(np.zeros((5, 3, 2)), LifParams())
        assert not spikes.any()
        assert not h.any()

    def test_hand_trace(self):
        # u_th=1, beta=0.5, v_reset=0, x=[0.7, 0.7]
        trace = lif_run(np.array([[0.7], [0.7]]), LifParams())
        assert trace.spikes.ravel().tolist() == [0.0, 1.0]
        np.testing.assert_allclose(trace.membranes.ravel(), [0.7, 1.05])
        assert trace.h_final.item() == 0.0

    def test_threshold_equality_fires(self):
        spikes, _ = lif_forward(np.array([[1.0]]), LifParams())
        assert spikes.item() == 1.0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            lif_forward(np.array([[np.nan]]), LifParams())

    def test_empty_time_axis_rejected(self):
        with pytest.raises(ValueError):
            lif_forward(np.zeros((0, 2)), LifParams())

    def test_binary_outputs(self):
        rng = np.random.default_rng(0)
        spikes, _ = lif_forward(rng.normal(0, 2, (6, 4, 5)), LifParams())
        assert np.all((spikes == 0) | (spikes == 1))

    def test_reset_and_leak_exact(self):
        # observe h[t] through the next membrane: u[t+1] = h[t] + x[t+1]
        rng = np.random.default_rng(1)
        p = LifParams(u_th=0.8, beta=0.4, v_reset=0.1)
        x = rng.normal(0, 1, (6, 32)).astype(np.float64)
        trace = lif_run(x, p)
        for t in range(5):
            # reconstruct h[t] from the next membrane; (h + x) - x costs ~1 ulp
            h_t = trace.membranes[t + 1] - x[t + 1]
            fired = trace.spikes[t] == 1
            np.testing.assert_allclose(h_t[fired], p.v_reset, rtol=0, atol=1e-14)
            np.testing.assert_allclose(
                h_t[~fired], p.beta * trace.membranes[t][~fired], rtol=1e-12, atol=1e-14
            )

    def test_decay_is_geometric(self):
        p = LifParams(u_th=5.0, beta=0.5, v_reset=0.0)
        x = np.zeros((6, 1))
        x[0] = 1.0  # below threshold, then silence
        trace = lif_run(x, p)
        assert not trace.spikes.any()
        for t in range(1, 6):
            assert trace.membranes[t].item() == pytest.approx(0.5**t, rel=1e-12)


class TestScalarOracle:
    def test_bit_exact_sweep(self):
        rng = np.random.default_rng(42)
        for case in range(250):
            t = int(rng.integers(1, 6))
            shape = (t, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
            dtype = np.float32 if case % 2 == 0 else np.float64
            x = rng.normal(0, 1.5, shape).astype(dtype)
            p = LifParams(
                u_th=float(rng.uniform(0.3, 1.5)),
                beta=float(rng.uniform(0.1, 0.9)),
                v_reset=float(rng.uniform(-0.2, 0.2)),
            )
            trace = lif_run(x, p)
            s_ref, u_ref, h_ref = scalar_loop_oracle(x, p)
            assert np.array_equal(trace.spikes, s_ref)
            assert np.array_equal(trace.membranes, u_ref)
            assert np.array_equal(trace.h_final, h_ref)


class TestLifBackward:
    def test_zero_upstream(self):
        p = LifParams()
        trace = lif_run(np.random.default_rng(0).normal(0, 1, (3, 4)), p)
        grad = lif_backward(np.zeros((3, 4)), trace.membranes, p)
        assert not grad.any()

    def test_outside_window_no_spatial_grad(self):
        p = LifParams()
        x = np.array([[5.0]])  # u - u_th = 4, far outside the window
        trace = lif_run(x, p)
        grad = lif_backward(np.array([[1.0]]), trace.membranes, p)
        assert grad.item() == 0.0

    def test_shape_mismatch_rejected(self):
        p = LifParams()
        with pytest.raises(ValueError):
            lif_backward(np.zeros((2, 3)), np.zeros((2, 4)), p)

    def test_two_step_hand_fd(self):
        # frozen-gate smoothed relaxation vs analytic backward, h = 1e-4
        p = LifParams()
        x = np.array([[0.7], [0.7]])
        outs, gates, membranes = lif_forward_smooth(x, p)
        w = np.array([[0.8], [-1.3]])
        analytic = lif_backward(w, membranes, p, gates=gates)

        h = 1e-4
        fd = np.zeros_like(x)
        for t in range(2):
            for sign, bucket in ((1, 1.0), (-1, -1.0)):
                xp = x.copy()
                xp[t, 0] += bucket * h
                outs_p, _, _ = lif_forward_smooth(xp, p, frozen_gates=gates)
                fd[t, 0] += bucket * float((w * outs_p).sum())
        fd /= 2 * h
        np.testing.assert_allclose(fd, analytic, rtol=1e-4, atol=1e-10)

    def test_random_traces_fd(self):
        rng = np.random.default_rng(7)
        p = LifParams(u_th=0.9, beta=0.6, v_reset=0.0, surrogate_width=0.5)
        h = 1e-5
        for _ in range(25):
            x = rng.normal(0.3, 0.8, (3, 5))
            _, gates, membranes = lif_forward_smooth(x, p)
            # skip traces with a membrane near the window edge (kink crossing)
            edge = np.abs(np.abs(membranes - p.u_th) - p.surrogate_width)
            if edge.min() < 10 * h:
                continue
            w = rng.normal(0, 1, x.shape)
            analytic = lif_backward(w, membranes, p, gates=gates)
            fd = np.zeros_like(x)
            for idx in np.ndindex(x.shape):
                for sign in (1.0, -1.0):
                    xp = x.copy()
                    xp[idx] += sign * h
                    outs_p, _, _ = lif_forward_smooth(xp, p, frozen_gates=gates)
                    fd[idx] += sign * float((w * outs_p).sum())
                fd[idx] /= 2 * h
            scale = max(np.linalg.norm(analytic), 1e-12)
            assert np.linalg.norm(fd - analytic) / scale <= 1e-3

    def test_missing_state_rejected(self):
        with pytest.raises(ValueError):
            lif_backward(np.zeros((2, 2)), np.zeros((0, 2)), LifParams())
