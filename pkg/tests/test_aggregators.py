import numpy as np
import pytest

from winmix import aggregators as A
from winmix import tensor as T
from winmix.tensor import ShapeError, Tensor

from oracles import gelu_ref, linmapper_loops, mhsa_loops


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


def linear_params(rng, c, ws, gs, w_h=None, w_w=None, w_p=None, zeros_bias=True):
    k = gs * ws
    def pick(given, shape):
        return np.asarray(given, dtype=np.float64) if given is not None \
            else rng.standard_normal(shape)
    return A.LinMapperParams(
        w_h=t64(pick(w_h, (k, k))), b_h=t64(np.zeros(k) if zeros_bias else rng.standard_normal(k)),
        w_w=t64(pick(w_w, (k, k))), b_w=t64(np.zeros(k) if zeros_bias else rng.standard_normal(k)),
        w_p=t64(pick(w_p, (c, c))), b_p=t64(np.zeros(c)),
        gs=gs, ws=ws)


class TestLinMapper:
    def test_zero_weights_annihilate(self):
        rng = np.random.default_rng(0)
        p = linear_params(rng, 4, 2, 2, w_h=np.zeros((4, 4)), w_w=np.zeros((4, 4)),
                          w_p=np.eye(4))
        x = t64(rng.standard_normal((3, 4, 4)))
        out = A.linmapper_forward(x, p)
        np.testing.assert_array_equal(out.numpy(), 0.0)

    def test_identity_maps_with_half_projection(self):
        rng = np.random.default_rng(1)
        k = 6
        p = linear_params(rng, 3, 2, 3, w_h=np.eye(k), w_w=np.eye(k),
                          w_p=0.5 * np.eye(3))
        x = t64(rng.standard_normal((2, 3, 4)))
        out = A.linmapper_forward(x, p)
        np.testing.assert_allclose(out.numpy(), x.numpy(), rtol=1e-12)

    def test_height_swap_window(self):
        # ws=2, gs=1, C=1: swapping the height axis flips the window rows
        p = linear_params(np.random.default_rng(2), 1, 2, 1,
                          w_h=[[0, 1], [1, 0]], w_w=np.zeros((2, 2)), w_p=[[1.0]])
        x = t64(np.array([[[1.0, 2.0, 3.0, 4.0]]]))  # window [[1,2],[3,4]]
        out = A.linmapper_forward(x, p).numpy()
        np.testing.assert_array_equal(out, [[[3.0, 4.0, 1.0, 2.0]]])

    @pytest.mark.parametrize("layout", [False, True])
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_scalar_loop_oracle(self, layout, seed):
        rng = np.random.default_rng(10 + seed)
        c, ws, gs = 6, 3, 2
        p = linear_params(rng, c, ws, gs, zeros_bias=False)
        x = rng.standard_normal((2, c, ws * ws))
        got = A.linmapper_forward(t64(x), p, layout_faithful=layout).numpy()
        want = linmapper_loops(x, p.w_h.numpy(), p.b_h.numpy(), p.w_w.numpy(),
                               p.b_w.numpy(), p.w_p.numpy(), p.b_p.numpy(),
                               gs, ws, layout_faithful=layout)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_layout_mode_differs_from_symmetric_when_gs_gt_1(self):
        rng = np.random.default_rng(20)
        p = linear_params(rng, 4, 2, 2, zeros_bias=False)
        x = t64(rng.standard_normal((1, 4, 4)))
        sym = A.linmapper_forward(x, p, layout_faithful=False).numpy()
        lit = A.linmapper_forward(x, p, layout_faithful=True).numpy()
        assert np.abs(sym - lit).max() > 1e-6

    def test_layout_mode_equal_when_gs_1(self):
        # with one channel per group the row-major chunk is exactly a row
        rng = np.random.default_rng(21)
        p = linear_params(rng, 3, 2, 1, zeros_bias=False)
        x = t64(rng.standard_normal((2, 3, 4)))
        sym = A.linmapper_forward(x, p, layout_faithful=False).numpy()
        lit = A.linmapper_forward(x, p, layout_faithful=True).numpy()
        np.testing.assert_allclose(sym, lit, rtol=1e-12)

    def test_group_divisibility_enforced(self):
        with pytest.raises(ShapeError):
            A.linmapper_forward(t64(np.zeros((1, 5, 4))),
                                linear_params(np.random.default_rng(22), 4, 2, 2))

    def test_axial_cross_jacobian_sparsity_ws7(self):
        # perturbing input token (h, w) moves only outputs in row h or col w
        rng = np.random.default_rng(23)
        ws, gs, c = 7, 2, 4
        p = linear_params(rng, c, ws, gs, zeros_bias=False)
        x = rng.standard_normal((1, c, ws * ws))
        base = A.linmapper_forward(t64(x), p).numpy()
        for (h, w) in [(0, 0), (3, 5), (6, 2)]:
            probe = x.copy()
            probe[0, :, h * ws + w] += 1.0
            moved = A.linmapper_forward(t64(probe), p).numpy()
            delta = np.abs(moved - base).sum(axis=1).reshape(ws, ws)
            affected = delta > 1e-12
            cross = np.zeros((ws, ws), dtype=bool)
            cross[h, :] = True
            cross[:, w] = True
            assert (affected <= cross).all()
            assert affected[h, w]


class TestDWLinMapper:
    def dw_params(self, rng, c, ws, gs):
        g = c // gs
        k = gs * ws
        return A.DWLinMapperParams(
            w_h=t64(rng.standard_normal((g, k, k))), b_h=t64(rng.standard_normal((g, k))),
            w_w=t64(rng.standard_normal((g, k, k))), b_w=t64(rng.standard_normal((g, k))),
            w_p=t64(rng.standard_normal((c, c))), b_p=t64(rng.standard_normal(c)),
            gs=gs, ws=ws)

    def test_identical_groups_degenerate_to_shared(self):
        rng = np.random.default_rng(30)
        c, ws, gs = 6, 2, 2
        shared = linear_params(rng, c, ws, gs, zeros_bias=False)
        g = c // gs
        dw = A.DWLinMapperParams(
            w_h=t64(np.stack([shared.w_h.numpy()] * g)), b_h=t64(np.stack([shared.b_h.numpy()] * g)),
            w_w=t64(np.stack([shared.w_w.numpy()] * g)), b_w=t64(np.stack([shared.b_w.numpy()] * g)),
            w_p=shared.w_p, b_p=shared.b_p, gs=gs, ws=ws)
        x = t64(rng.standard_normal((2, c, ws * ws)))
        np.testing.assert_array_equal(A.dw_linmapper_forward(x, dw).numpy(),
                                      A.linmapper_forward(x, shared).numpy())

    def test_group_selective_weights(self):
        # group 0 passes through (identity + half projection), group 1 zeroed
        ws, gs, c = 2, 1, 2
        k = gs * ws
        dw = A.DWLinMapperParams(
            w_h=t64(np.stack([np.eye(k), np.zeros((k, k))])), b_h=t64(np.zeros((2, k))),
            w_w=t64(np.stack([np.eye(k), np.zeros((k, k))])), b_w=t64(np.zeros((2, k))),
            w_p=t64(0.5 * np.eye(c)), b_p=t64(np.zeros(c)), gs=gs, ws=ws)
        rng = np.random.default_rng(31)
        x = rng.standard_normal((1, c, ws * ws))
        out = A.dw_linmapper_forward(t64(x), dw).numpy()
        np.testing.assert_allclose(out[0, 0], x[0, 0], rtol=1e-12)
        np.testing.assert_array_equal(out[0, 1], 0.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_scalar_loop_oracle(self, seed):
        rng = np.random.default_rng(40 + seed)
        c, ws, gs = 4, 2, 2
        p = self.dw_params(rng, c, ws, gs)
        x = rng.standard_normal((2, c, ws * ws))
        got = A.dw_linmapper_forward(t64(x), p).numpy()
        want = linmapper_loops(x, p.w_h.numpy(), p.b_h.numpy(), p.w_w.numpy(),
                               p.b_w.numpy(), p.w_p.numpy(), p.b_p.numpy(), gs, ws)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_same_flops_as_shared(self):
        rng = np.random.default_rng(50)
        c, ws, gs = 8, 2, 2
        x = t64(rng.standard_normal((3, c, ws * ws)))
        with T.count_macs() as shared_macs:
            A.linmapper_forward(x, linear_params(rng, c, ws, gs))
        with T.count_macs() as dw_macs:
            A.dw_linmapper_forward(x, self.dw_params(rng, c, ws, gs))
        assert shared_macs[0] == dw_macs[0] > 0


class TestWindowMlp:
    def mlp_params(self, rng, c, ws, gs, rho):
        k = gs * ws
        hid = rho * k
        return A.WindowMlpParams(
            w1_h=t64(rng.standard_normal((hid, k))), b1_h=t64(rng.standard_normal(hid)),
            w2_h=t64(rng.standard_normal((k, hid))), b2_h=t64(rng.standard_normal(k)),
            w1_w=t64(rng.standard_normal((hid, k))), b1_w=t64(rng.standard_normal(hid)),
            w2_w=t64(rng.standard_normal((k, hid))), b2_w=t64(rng.standard_normal(k)),
            w_p=t64(rng.standard_normal((c, c))), b_p=t64(np.zeros(c)),
            gs=gs, ws=ws, rho=rho)

    def test_zero_second_layers_zero_branches(self):
        rng = np.random.default_rng(60)
        p = self.mlp_params(rng, 4, 2, 2, rho=2)
        p.w2_h = t64(np.zeros_like(p.w2_h.numpy()))
        p.b2_h = t64(np.zeros_like(p.b2_h.numpy()))
        p.w2_w = t64(np.zeros_like(p.w2_w.numpy()))
        p.b2_w = t64(np.zeros_like(p.b2_w.numpy()))
        p.w_p = t64(np.eye(4))
        p.b_p = t64(np.zeros(4))
        out = A.window_mlp_forward(t64(rng.standard_normal((2, 4, 4))), p)
        np.testing.assert_array_equal(out.numpy(), 0.0)

    def test_identity_layers_reduce_to_linmapper_identity(self):
        rng = np.random.default_rng(61)
        c, ws, gs = 3, 2, 3
        k = gs * ws
        p = A.WindowMlpParams(
            w1_h=t64(np.eye(k)), b1_h=t64(np.zeros(k)),
            w2_h=t64(np.eye(k)), b2_h=t64(np.zeros(k)),
            w1_w=t64(np.eye(k)), b1_w=t64(np.zeros(k)),
            w2_w=t64(np.eye(k)), b2_w=t64(np.zeros(k)),
            w_p=t64(0.5 * np.eye(c)), b_p=t64(np.zeros(c)),
            gs=gs, ws=ws, rho=1)
        x = t64(rng.standard_normal((2, c, ws * ws)))
        out = A.window_mlp_forward(x, p, activation=lambda t: t)
        np.testing.assert_allclose(out.numpy(), x.numpy(), rtol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_scalar_loop_oracle(self, seed):
        rng = np.random.default_rng(70 + seed)
        c, ws, gs, rho = 4, 2, 2, 2
        p = self.mlp_params(rng, c, ws, gs, rho)
        x = rng.standard_normal((2, c, ws * ws))
        got = A.window_mlp_forward(t64(x), p).numpy()
        want = linmapper_loops(
            x, p.w1_h.numpy(), p.b1_h.numpy(), p.w1_w.numpy(), p.b1_w.numpy(),
            p.w_p.numpy(), p.b_p.numpy(), gs, ws,
            activation=gelu_ref,
            second=((p.w2_h.numpy(), p.b2_h.numpy()), (p.w2_w.numpy(), p.b2_w.numpy())))
        assert np.abs(got - want).max() <= 1e-5


class TestWindowMhsa:
    def test_zero_value_projection_broadcasts_output_bias(self):
        rng = np.random.default_rng(80)
        c, ws, heads = 4, 2, 2
        p = A.init_aggregator("MHSA", c, ws, heads=heads, seed=0, dtype=np.float64)
        p.w_v = t64(np.zeros((c, c)))
        p.b_v = t64(np.zeros(c))
        p.b_o = t64(rng.standard_normal(c))
        x = t64(rng.standard_normal((3, ws * ws, c)))
        out = A.window_mhsa_forward(x, p).numpy()
        np.testing.assert_allclose(out, np.broadcast_to(p.b_o.numpy(), out.shape),
                                   atol=1e-12)

    def test_single_token_window(self):
        rng = np.random.default_rng(81)
        c = 4
        p = A.init_aggregator("MHSA", c, 1, heads=2, seed=1, dtype=np.float64)
        for name in ("w_q", "w_k", "w_v", "w_o"):
            setattr(p, name, t64(rng.standard_normal((c, c))))
        for name in ("b_q", "b_k", "b_v", "b_o"):
            setattr(p, name, t64(rng.standard_normal(c)))
        x = rng.standard_normal((2, 1, c))
        out = A.window_mhsa_forward(t64(x), p).numpy()
        want = (x @ p.w_v.numpy().T + p.b_v.numpy()) @ p.w_o.numpy().T + p.b_o.numpy()
        np.testing.assert_allclose(out, want, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_direct_loop_evaluation(self, seed):
        rng = np.random.default_rng(90 + seed)
        c, ws = 6, 2
        p = A.init_aggregator("MHSA", c, ws, heads=1, seed=seed, dtype=np.float64)
        p.rel_bias = t64(rng.standard_normal(p.rel_bias.shape))
        x = rng.standard_normal((2, ws * ws, c))
        got = A.window_mhsa_forward(t64(x), p).numpy()
        assert np.abs(got - mhsa_loops(x, p)).max() <= 1e-5

    def test_head_divisibility(self):
        p = A.init_aggregator("MHSA", 6, 2, heads=2, seed=0)
        with pytest.raises(ShapeError):
            A.init_aggregator("MHSA", 6, 2, heads=4, seed=0)
        with pytest.raises(ShapeError):
            A.window_mhsa_forward(Tensor(np.zeros((1, 4, 8), dtype=np.float32)), p)


class TestInit:
    def test_deterministic_per_seed(self):
        a = A.init_aggregator("Linear", 8, 2, gs=2, seed=7)
        b = A.init_aggregator("Linear", 8, 2, gs=2, seed=7)
        for (na, ta), (nb, tb) in zip(a.tensors(), b.tensors()):
            assert na == nb
            np.testing.assert_array_equal(ta.numpy(), tb.numpy())

    def test_different_seed_differs(self):
        a = A.init_aggregator("Linear", 8, 2, gs=2, seed=7)
        b = A.init_aggregator("Linear", 8, 2, gs=2, seed=8)
        assert np.abs(a.w_h.numpy() - b.w_h.numpy()).max() > 0

    def test_trunc_normal_bounded(self):
        p = A.init_aggregator("MLP", 16, 4, gs=4, rho=4, seed=3)
        for _, t in p.tensors():
            assert np.abs(t.numpy()).max() <= 2 * 0.02 + 1e-9

    @pytest.mark.parametrize("kind,count_fn", [
        ("Linear", lambda c, ws, gs, heads, rho: 2 * ((gs * ws) ** 2 + gs * ws) + c * c + c),
        ("DWLinear", lambda c, ws, gs, heads, rho:
            (c // gs) * 2 * ((gs * ws) ** 2 + gs * ws) + c * c + c),
        ("MLP", lambda c, ws, gs, heads, rho:
            2 * (rho * (gs * ws) ** 2 + rho * gs * ws + rho * (gs * ws) ** 2 + gs * ws)
            + c * c + c),
        ("MHSA", lambda c, ws, gs, heads, rho:
            3 * c * c + 3 * c + c * c + c + heads * (2 * ws - 1) ** 2),
    ])
    def test_parameter_count_closed_form(self, kind, count_fn):
        c, ws, gs, heads, rho = 8, 2, 2, 2, 4
        p = A.init_aggregator(kind, c, ws, gs=gs, heads=heads, rho=rho, seed=0)
        total = sum(t.size for _, t in p.tensors())
        assert total == count_fn(c, ws, gs, heads, rho)

    def test_linmapper_96_7_3_example(self):
        p = A.init_aggregator("Linear", 96, 7, gs=3, seed=0)
        assert sum(t.size for _, t in p.tensors()) == 10236

    def test_shared_vs_dw_parameter_delta(self):
        c, ws, gs = 12, 2, 3
        shared = A.init_aggregator("Linear", c, ws, gs=gs, seed=0)
        dw = A.init_aggregator("DWLinear", c, ws, gs=gs, seed=0)
        n_shared = sum(t.size for _, t in shared.tensors())
        n_dw = sum(t.size for _, t in dw.tensors())
        assert n_dw - n_shared == (c // gs - 1) * 2 * ((gs * ws) ** 2 + gs * ws)


class TestWindowEquivariance:
    @pytest.mark.parametrize("kind", A.AGGREGATOR_KINDS)
    def test_permuting_windows_permutes_outputs(self, kind):
        rng = np.random.default_rng(99)
        c, ws = 8, 2
        p = A.init_aggregator(kind, c, ws, gs=2, heads=2, seed=5, dtype=np.float64)
        x = rng.standard_normal((6, ws * ws, c))
        perm = rng.permutation(6)
        out = A.aggregate(kind, t64(x), p).numpy()
        out_perm = A.aggregate(kind, t64(x[perm]), p).numpy()
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)


class TestAggregatorGradients:
    @pytest.mark.parametrize("kind", A.AGGREGATOR_KINDS)
    @pytest.mark.parametrize("seed", range(10))
    def test_analytic_vs_central_difference(self, kind, seed):
        rng = np.random.default_rng(1000 + seed)
        c, ws = 4, 2
        p = A.init_aggregator(kind, c, ws, gs=2, heads=2, rho=2, seed=seed,
                              dtype=np.float64)
        # non-trivial parameter values so interactions are exercised
        for name, t in p.tensors():
            setattr(p, name, Tensor(rng.standard_normal(t.shape) * 0.5,
                                    requires_grad=True))
        x = Tensor(rng.standard_normal((2, ws * ws, c)), requires_grad=True)
        probe = Tensor(rng.standard_normal((2, ws * ws, c)))

        def loss_of(xt):
            return T.tsum(T.mul(A.aggregate(kind, xt, p), probe))

        T.backward(loss_of(x))
        fd = T.finite_difference_gradient(loss_of, Tensor(x.numpy()), h=1e-4).numpy()
        denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(x.grad)))
        assert (np.abs(x.grad - fd) / denom).max() < 1e-4
