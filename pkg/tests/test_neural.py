"""Tests for the autodiff engine, losses, optimizer, and checkpoints.

The gradient oracle is central finite differences (h=1e-5) computed by
re-running the forward pass with perturbed entries; analytic gradients
must match to relative error < 1e-4.  Loss goldens are hand computations
of the stated formulas.
"""

import math

import numpy as np
import pytest

from graspforge.errors import FormatError, InputError
from graspforge.neural import (
    AdamState,
    LayerSpec,
    Network,
    Tensor,
    adam_step,
    add,
    backward,
    concat,
    forward,
    gather_rows,
    group_max,
    linear,
    listnet_loss,
    load_checkpoint,
    log_softmax,
    mul_elem,
    normal_alignment_loss,
    pairwise_concat,
    reduce_max,
    reduce_mean,
    reduce_min,
    reduce_sum,
    relu,
    reshape,
    save_checkpoint,
    scale,
    softmax,
)

H = 1e-5
REL_TOL = 1e-4


def numeric_grad(loss_fn, x):
    """Central finite differences of a scalar function of x.data."""
    flat = x.data.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + H
        fp = loss_fn()
        flat[i] = old - H
        fm = loss_fn()
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * H)
    return g.reshape(x.data.shape)


def check_grad(build_loss, tensors):
    """Assert analytic gradients match finite differences on every tensor."""
    for t in tensors:
        t.grad = None
    loss = build_loss()
    backward(loss)
    for t in tensors:
        num = numeric_grad(lambda: build_loss().item(), t)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = max(float(np.abs(num).max()), 1e-8)
        assert np.abs(ana - num).max() / denom < REL_TOL


def rg(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# --- tensor basics ----------------------------------------------------------

class TestTensor:
    def test_shape_and_item(self):
        t = Tensor(np.zeros((2, 3)))
        assert t.shape == (2, 3)
        assert Tensor(np.array(1.5)).item() == 1.5
        with pytest.raises(InputError, match="scalar"):
            t.item()

    def test_backward_requires_tape(self):
        with pytest.raises(InputError, match="tape"):
            backward(Tensor(np.ones(3), requires_grad=True))
        with pytest.raises(InputError, match="Tensor"):
            backward(np.ones(3))

    def test_upstream_shape_checked(self):
        x = rg(np.ones(3))
        y = relu(x)
        with pytest.raises(InputError, match="upstream"):
            backward(y, np.ones(4))


# --- op goldens -------------------------------------------------------------

class TestOpGoldens:
    def test_pointwise_identity(self):
        x = np.random.default_rng(0).normal(size=(7, 4))
        y = linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        assert np.array_equal(y.data, x)

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(1).normal(size=(5, 6)) * 3
        s = softmax(Tensor(x), axis=-1)
        assert np.abs(s.data.sum(axis=-1) - 1.0).max() <= 1e-12
        full = softmax(Tensor(x), axis=None)
        assert abs(full.data.sum() - 1.0) <= 1e-12

    def test_max_pool_length_one_identity(self):
        x = np.random.default_rng(2).normal(size=(1, 5))
        y = reduce_max(Tensor(x), axis=0)
        assert np.array_equal(y.data, x[0])

    def test_relu_gradient_zero_below_zero(self):
        x = rg([-1.0, -0.5, 0.5, 2.0])
        backward(relu(x))
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0, 1.0])

    def test_mean_pool_distributes_uniformly(self):
        x = rg(np.arange(8.0).reshape(4, 2))
        backward(reduce_sum(reduce_mean(x, axis=0)))
        assert np.allclose(x.grad, 0.25)

    def test_max_ties_route_to_first(self):
        x = rg([3.0, 3.0, 1.0])
        backward(reduce_max(x, axis=0))
        assert np.array_equal(x.grad, [1.0, 0.0, 0.0])

    def test_gather_rows_accumulates_duplicates(self):
        x = rg(np.arange(6.0).reshape(3, 2))
        backward(reduce_sum(gather_rows(x, [0, 0, 2])))
        assert np.array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])

    def test_pairwise_concat_layout(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0], [9.0, 10.0]]))
        y = pairwise_concat(a, b)
        assert y.shape == (2, 3, 4)
        assert np.array_equal(y.data[1, 2], [3, 4, 9, 10])

    def test_group_max_values(self):
        x = Tensor(np.array([[1.0, 9.0], [5.0, 2.0], [3.0, 3.0]]))
        y = group_max(x, [np.array([0, 1]), np.array([2])])
        assert np.array_equal(y.data, [[5.0, 9.0], [3.0, 3.0]])
        with pytest.raises(InputError, match="empty"):
            group_max(x, [np.array([], dtype=int)])


# --- finite-difference checks ------------------------------------------------

class TestGradients:
    def test_linear_relu_chain(self):
        rng = np.random.default_rng(3)
        x = rg(rng.normal(size=(5, 3)))
        w1, b1 = rg(rng.normal(size=(3, 4))), rg(rng.normal(size=4))
        w2, b2 = rg(rng.normal(size=(4, 2))), rg(rng.normal(size=2))

        def loss():
            return reduce_sum(linear(relu(linear(x, w1, b1)), w2, b2))

        check_grad(loss, [x, w1, b1, w2, b2])

    def test_softmax_and_log_softmax(self):
        rng = np.random.default_rng(4)
        x = rg(rng.normal(size=(3, 4)))
        check_grad(lambda: reduce_sum(
            mul_elem(softmax(x, axis=-1), rng2_const)), [x])
        check_grad(lambda: reduce_sum(
            mul_elem(log_softmax(x, axis=1), rng2_const)), [x])
        check_grad(lambda: reduce_sum(
            mul_elem(log_softmax(x, axis=None), rng2_const)), [x])

    def test_reductions(self):
        rng = np.random.default_rng(5)
        x = rg(rng.normal(size=(6, 3)))
        w = rng.normal(size=3)
        check_grad(lambda: reduce_sum(mul_elem(reduce_max(x, axis=0),
                                               w)), [x])
        check_grad(lambda: reduce_sum(mul_elem(reduce_min(x, axis=0),
                                               w)), [x])
        check_grad(lambda: reduce_sum(mul_elem(reduce_mean(x, axis=0),
                                               w)), [x])

    def test_structural_ops(self):
        rng = np.random.default_rng(6)
        a = rg(rng.normal(size=(4, 3)))
        b = rg(rng.normal(size=(2, 3)))

        def loss():
            pc = pairwise_concat(a, b)                      # (4,2,6)
            flat = reshape(pc, (8, 6))
            picked = gather_rows(flat, [0, 3, 3, 7])
            joined = concat([picked, picked], axis=-1)      # (4,12)
            return reduce_sum(scale(joined, 0.5))

        check_grad(loss, [a, b])

    def test_group_max_and_add(self):
        rng = np.random.default_rng(7)
        x = rg(rng.normal(size=(6, 4)))
        y = rg(rng.normal(size=(2, 4)))
        groups = [np.array([0, 2, 4]), np.array([1, 3, 5])]

        def loss():
            return reduce_sum(add(group_max(x, groups), y))

        check_grad(loss, [x, y])

    def test_random_small_networks(self):
        for seed in range(3):
            rng = np.random.default_rng(100 + seed)
            net = Network([
                LayerSpec("pointwise-linear", 3, 8),
                LayerSpec("relu", 8, 8),
                LayerSpec("pointwise-linear", 8, 5),
                LayerSpec("max-pool", 5, 5, axis=0),
            ], seed=seed)
            x = rg(rng.normal(size=(9, 3)))
            tensors = [x] + list(net.params.values())

            def loss():
                return reduce_sum(forward(net, x))

            check_grad(loss, tensors)


rng2_const = np.random.default_rng(40).normal(size=(3, 4))


# --- layer specs and sequential networks -------------------------------------

class TestNetwork:
    def test_layer_spec_validation(self):
        with pytest.raises(InputError, match="unknown layer kind"):
            LayerSpec("conv2d", 3, 3)
        with pytest.raises(InputError, match="fan_in"):
            LayerSpec("relu", 0, 0)
        with pytest.raises(InputError, match="width"):
            LayerSpec("relu", 3, 4)
        with pytest.raises(InputError, match="axis"):
            LayerSpec("max-pool", 3, 3)

    def test_wiring_mismatch(self):
        with pytest.raises(InputError, match="widths disagree"):
            Network([LayerSpec("pointwise-linear", 3, 8),
                     LayerSpec("pointwise-linear", 4, 2)], seed=0)

    def test_shape_error_names_layer(self):
        net = Network([LayerSpec("pointwise-linear", 3, 8)], seed=0)
        with pytest.raises(InputError, match=r"layer 0 \(pointwise-linear\)"):
            forward(net, Tensor(np.zeros((5, 4))))

    def test_seeded_init_deterministic(self):
        a = Network([LayerSpec("fully-connected", 4, 4)], seed=9)
        b = Network([LayerSpec("fully-connected", 4, 4)], seed=9)
        assert np.array_equal(a.params["layer0.weight"].data,
                              b.params["layer0.weight"].data)
        c = Network([LayerSpec("fully-connected", 4, 4)], seed=10)
        assert not np.array_equal(a.params["layer0.weight"].data,
                                  c.params["layer0.weight"].data)

    def test_pointwise_permutation_equivariance(self):
        net = Network([
            LayerSpec("pointwise-linear", 3, 6),
            LayerSpec("relu", 6, 6),
            LayerSpec("pointwise-linear", 6, 4),
        ], seed=1)
        rng = np.random.default_rng(11)
        x = rng.normal(size=(10, 3))
        perm = rng.permutation(10)
        base = forward(net, Tensor(x)).data
        permuted = forward(net, Tensor(x[perm])).data
        assert np.array_equal(permuted, base[perm])

    def test_pooled_permutation_invariance(self):
        net = Network([
            LayerSpec("pointwise-linear", 3, 6),
            LayerSpec("relu", 6, 6),
            LayerSpec("max-pool", 6, 6, axis=0),
        ], seed=2)
        rng = np.random.default_rng(12)
        x = rng.normal(size=(20, 3))
        perm = rng.permutation(20)
        assert np.array_equal(forward(net, Tensor(x)).data,
                              forward(net, Tensor(x[perm])).data)

    def test_state_dict_round_trip(self):
        net = Network([LayerSpec("pointwise-linear", 3, 5),
                       LayerSpec("relu", 5, 5),
                       LayerSpec("pointwise-linear", 5, 2)], seed=3)
        state = net.state_dict()
        other = Network(net.layers, seed=99)
        other.load_state(state)
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        assert np.array_equal(forward(net, x).data, forward(other, x).data)
        with pytest.raises(InputError, match="missing parameter"):
            other.load_state({})
        bad = dict(state)
        bad["layer0.weight"] = np.zeros((2, 2))
        with pytest.raises(InputError, match="shape"):
            other.load_state(bad)


# --- losses -------------------------------------------------------------------

class TestListNetLoss:
    def test_hand_computed_two_way(self):
        loss = listnet_loss(rg([0.0, 0.0]), [1.0, 0.0])
        assert abs(loss.item() - math.log(2.0)) <= 1e-12

    def test_saturated(self):
        loss = listnet_loss(rg([10.0, -10.0]), [1.0, 0.0])
        assert 0.0 <= loss.item() < 1e-4

    def test_shift_invariance(self):
        rng = np.random.default_rng(13)
        s = rng.normal(size=6)
        y = (rng.uniform(size=6) < 0.4).astype(float)
        a = listnet_loss(Tensor(s), y).item()
        b = listnet_loss(Tensor(s + 3.7), y).item()
        assert abs(a - b) <= 1e-10

    def test_single_positive_equals_neg_log_softmax(self):
        rng = np.random.default_rng(14)
        s = rng.normal(size=5)
        y = np.zeros(5)
        y[3] = 1.0
        expect = -(s[3] - np.log(np.exp(s).sum()))
        assert abs(listnet_loss(Tensor(s), y).item() - expect) <= 1e-12
        assert listnet_loss(Tensor(s), y).item() >= 0.0

    def test_all_zero_labels(self):
        s = rg([0.3, -0.2, 1.0])
        loss = listnet_loss(s, np.zeros(3))
        assert loss.item() == 0.0
        backward(loss)
        assert np.allclose(s.grad, 0.0, atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        s = rg(rng.normal(size=7))
        y = np.zeros(7)
        y[[1, 4]] = 1.0
        check_grad(lambda: listnet_loss(s, y), [s])

    def test_validation(self):
        with pytest.raises(InputError, match="binary"):
            listnet_loss(Tensor(np.zeros(3)), [0.5, 0.0, 1.0])
        with pytest.raises(InputError, match="labels shape"):
            listnet_loss(Tensor(np.zeros(3)), np.zeros(4))
        with pytest.raises(InputError, match="1-D"):
            listnet_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 2)))


class TestNormalAlignmentLoss:
    def unit_rows(self, seed, n):
        v = np.random.default_rng(seed).normal(size=(n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def test_aligned_and_antiparallel(self):
        t = self.unit_rows(16, 8)
        loss, skipped = normal_alignment_loss(Tensor(2.5 * t), t)
        assert abs(loss.item() - (-8.0)) <= 1e-12 and skipped == 0
        loss, skipped = normal_alignment_loss(Tensor(-0.3 * t), t)
        assert abs(loss.item() - 8.0) <= 1e-12 and skipped == 0

    def test_zero_row_skipped_and_counted(self):
        t = self.unit_rows(17, 3)
        pred = t.copy()
        pred[1] = 0.0
        p = rg(pred)
        loss, skipped = normal_alignment_loss(p, t)
        assert skipped == 1
        assert abs(loss.item() - (-2.0)) <= 1e-12
        backward(loss)
        assert np.array_equal(p.grad[1], np.zeros(3))

    def test_gradient_matches_finite_differences(self):
        t = self.unit_rows(18, 6)
        p = rg(np.random.default_rng(19).normal(size=(6, 3)))
        check_grad(lambda: normal_alignment_loss(p, t)[0], [p])

    def test_validation(self):
        with pytest.raises(InputError, match="unit"):
            normal_alignment_loss(Tensor(np.ones((2, 3))),
                                  np.ones((2, 3)) * 2)
        with pytest.raises(InputError, match=r"\(L, 3\)"):
            normal_alignment_loss(Tensor(np.ones((2, 4))), np.ones((2, 4)))


# --- optimizer ------------------------------------------------------------------

class TestAdam:
    def make(self, values, **kw):
        p = {"w": Tensor(np.asarray(values, dtype=float), requires_grad=True)}
        return p, AdamState(p, **kw)

    def test_zero_gradient_fixed_point(self):
        p, st = self.make([1.0, -2.0, 3.0])
        before = p["w"].data.copy()
        adam_step(st, {"w": np.zeros(3)})
        assert np.array_equal(p["w"].data, before)

    def test_first_step_closed_form(self):
        g = np.array([0.5, -3.0, 1e-12])
        p, st = self.make(np.zeros(3), lr=1e-4)
        adam_step(st, {"w": g})
        expect = -1e-4 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p["w"].data, expect, atol=1e-12)
        assert st.step == 1

    def test_converges_on_quadratic(self):
        target = np.array([0.3, -0.7, 1.1])
        p, st = self.make(np.zeros(3), lr=1e-2)
        losses = []
        for _ in range(200):
            diff = p["w"].data - target
            losses.append(0.5 * float(diff @ diff))
            adam_step(st, {"w": diff})
        warm = losses[20:]
        assert all(b < a for a, b in zip(warm, warm[1:]))
        assert losses[-1] < 1e-3

    def test_rejects_non_finite(self):
        p, st = self.make([1.0])
        before = p["w"].data.copy()
        with pytest.raises(InputError, match="non-finite"):
            adam_step(st, {"w": np.array([np.nan])})
        assert st.step == 0
        assert np.array_equal(p["w"].data, before)
        assert np.array_equal(st.m["w"], np.zeros(1))

    def test_name_and_shape_mismatch(self):
        p, st = self.make([1.0, 2.0])
        with pytest.raises(InputError, match="disagree"):
            adam_step(st, {"other": np.zeros(2)})
        with pytest.raises(InputError, match="shape"):
            adam_step(st, {"w": np.zeros(3)})

    def test_defaults(self):
        p, st = self.make([1.0])
        assert (st.lr, st.beta1, st.beta2, st.eps) == (1e-4, 0.9, 0.999, 1e-8)


# --- checkpoints -----------------------------------------------------------------

class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "net.gfnn"
        rng = np.random.default_rng(20)
        params = {"enc.w": rng.normal(size=(4, 7)),
                  "enc.b": rng.normal(size=7),
                  "scalar": np.array(2.5)}
        meta = {"L": 256, "c": 64, "stages": 3}
        save_checkpoint(path, params, meta)
        loaded, got_meta = load_checkpoint(path)
        assert got_meta == meta
        assert set(loaded) == set(params)
        for k in params:
            assert np.array_equal(loaded[k], params[k])
            assert loaded[k].dtype == np.float64

    def test_accepts_tensors_and_is_deterministic(self, tmp_path):
        params = {"w": Tensor(np.arange(6.0).reshape(2, 3))}
        a, b = tmp_path / "a.gfnn", tmp_path / "b.gfnn"
        save_checkpoint(a, params)
        save_checkpoint(b, params)
        assert a.read_bytes() == b.read_bytes()
        loaded, meta = load_checkpoint(a)
        assert meta == {} and np.array_equal(loaded["w"],
                                             np.arange(6.0).reshape(2, 3))

    def test_magic_and_version_checked(self, tmp_path):
        path = tmp_path / "x.gfnn"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)
        save_checkpoint(path, {"w": np.zeros(1)})
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(path)

    def test_truncation_and_trailing(self, tmp_path):
        path = tmp_path / "x.gfnn"
        save_checkpoint(path, {"w": np.arange(5.0)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)
        path.write_bytes(raw + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(path)
