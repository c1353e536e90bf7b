from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kwarehouse.core import ops
from kwarehouse.core.fdcheck import finite_diff_errors
from kwarehouse.core.naive import conv2d_naive
from kwarehouse.core.tensor import GradTape, Tensor, backprop_gradients
from kwarehouse.kw import (
    AssemblyError,
    KWConvLayer,
    TemperatureSchedule,
    Warehouse,
    assemble_kernel,
    attention_logits,
    kw_forward,
    normalize_attention,
    reference_dynamic_conv,
    temperature_at,
    tile_kernel,
)
from kwarehouse.planner import arch_from_dict, partition_kernel, plan_warehouses


def scalar_blend(z, tau, beta):
    """One-line oracle for the linear attention blend, written on Python floats."""
    s = sum(abs(v) for v in z)
    return [(1 - tau) * (v / s if s >= 1e-12 else 0.0) + tau * b for v, b in zip(z, beta)]


def build_layers(kernels, cell=None, b=1, strategy="one_to_one", fn="naf", seed=0, stride=1, pad=0,
                 dtype=np.float64):
    """KW layers sharing one warehouse; ``cell=None`` uses the gcd policy."""
    group = {"name": "g", "cell_policy": "explicit", "cell_dims": list(cell)} if cell else \
        {"name": "g", "cell_policy": "gcd"}
    layers = [{"id": f"l{i}", "kernel": list(k), "stride": stride, "pad": pad, "kind": "standard",
               "warehouse_group": "g"} for i, k in enumerate(kernels)]
    arch = arch_from_dict({"layers": layers, "groups": [group]})
    plan = plan_warehouses(arch, Fraction(b), None, strategy)
    g = plan.groups[0]
    rng = np.random.default_rng(seed)
    wh = Warehouse.for_group(g, rng, dtype)
    return [KWConvLayer(spec, g, wh, rng, fn, dtype) for spec in arch.layers], wh, g


# --- normalization ---------------------------------------------------------

def alpha_of(z, tau, beta, fn="naf"):
    return normalize_attention(Tensor(np.asarray(z, dtype=float)), tau, beta, fn).data


def test_pure_initialization_limit():
    assert alpha_of([3.0, -7.0, 0.1], 1.0, [0, 1, 0]).tolist() == [0.0, 1.0, 0.0]


def test_naf_examples():
    assert np.allclose(alpha_of([2, -1, 1], 0.0, [0, 1, 0]), [0.5, -0.25, 0.25], atol=1e-15)
    assert np.allclose(alpha_of([2, -1, 1], 0.5, [0, 1, 0]), [0.25, 0.375, 0.125], atol=1e-15)


def test_degenerate_logits_give_zero_mixture():
    assert np.all(alpha_of([0.0, 1e-14, 0.0], 0.0, [1, 0, 0]) == 0)


def test_relu_norm_divides_by_absolute_sum():
    assert np.allclose(alpha_of([2, -1, 1], 0.0, [0, 0, 0], "relu_norm"), [0.5, 0.0, 0.25])


def test_softmax_and_sigmoid_variants():
    z = np.array([0.3, -1.2, 2.0])
    e = np.exp(z)
    assert np.allclose(alpha_of(z, 0.0, [0, 0, 0], "softmax"), e / e.sum(), atol=1e-15)
    assert np.allclose(alpha_of(z, 0.25, [1, 0, 0], "sigmoid"), 0.75 / (1 + np.exp(-z)) + [0.25, 0, 0])


def test_temperature_out_of_range_and_width_mismatch():
    with pytest.raises(ValueError, match="temperature"):
        alpha_of([1, 2], 1.5, [0, 1])
    with pytest.raises(ValueError, match="width"):
        alpha_of([1, 2], 0.5, [0, 1, 0])


row = st.integers(2, 9).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.floats(-1e3, 1e3, allow_subnormal=False)),
    arrays(np.int8, n, elements=st.integers(0, 1))))


@given(row, st.floats(0, 1))
def test_matches_scalar_oracle(zb, tau):
    z, beta = zb
    assert np.allclose(alpha_of(z, tau, beta), scalar_blend(z.tolist(), tau, beta.tolist()), rtol=0, atol=1e-12)


@given(row, st.floats(0, 1))
def test_blend_is_affine_in_tau(zb, tau):
    z, beta = zb
    a0, at = alpha_of(z, 0.0, beta), alpha_of(z, tau, beta)
    assert np.max(np.abs(at - ((1 - tau) * a0 + tau * beta))) <= 1e-12


@given(row)
def test_unit_absolute_sum_and_signs(zb):
    z, beta = zb
    a = alpha_of(z, 0.0, beta)
    if np.abs(z).sum() >= 1e-12:
        assert abs(np.abs(a).sum() - 1.0) <= 1e-12
        assert np.all(a[z < 0] < 0) and np.all(a[z > 0] > 0)


# --- schedule --------------------------------------------------------------

def test_schedule_examples():
    s = TemperatureSchedule.from_epochs(10, 100)
    assert temperature_at(s, 0) == 1.0
    assert temperature_at(s, 500) == 0.5
    assert temperature_at(s, 1000) == 0.0 and temperature_at(s, 5000) == 0.0


@given(st.integers(1, 10_000), st.integers(0, 20_000), st.integers(0, 20_000))
def test_schedule_is_monotone_and_bounded(T, a, b):
    s = TemperatureSchedule(T)
    lo, hi = sorted((a, b))
    assert 0.0 <= s(hi) <= s(lo) <= 1.0


# --- attention logits ------------------------------------------------------

def test_zero_input_zero_biases_give_zero_logits():
    (layer,), _, _ = build_layers([(8, 64, 3, 3)])
    for p in (layer.attention.fc1_b, layer.attention.fc2_b):
        p.data[...] = 0
    z = attention_logits(Tensor(np.zeros((2, 64, 5, 5))), layer)
    assert z.shape == (2, layer.m, layer.warehouse.n_cols) and np.all(z.data == 0)


def test_hidden_width():
    (layer,), _, _ = build_layers([(8, 64, 3, 3)])
    assert layer.attention.hidden == 4
    (small,), _, _ = build_layers([(8, 3, 3, 3)])
    assert small.attention.hidden == 1


def test_logits_are_per_sample():
    (layer,), _, _ = build_layers([(8, 16, 3, 3)], b=Fraction(1, 2))
    x = np.random.default_rng(1).normal(size=(3, 16, 6, 6))
    batched = attention_logits(Tensor(x), layer).data
    for i in range(3):
        assert np.array_equal(attention_logits(Tensor(x[i:i + 1]), layer).data[0], batched[i])


def test_logits_channel_mismatch():
    (layer,), _, _ = build_layers([(8, 16, 3, 3)])
    with pytest.raises(ops.ShapeError, match="16 input channels"):
        attention_logits(Tensor(np.zeros((1, 8, 4, 4))), layer)


# --- assembly --------------------------------------------------------------

def test_unit_mixture_is_first_cell():
    wh = Warehouse("w", 3, (2, 2, 3, 3), False, np.random.default_rng(0))
    W = assemble_kernel(Tensor(np.array([[1.0, 0.0, 0.0]])), wh, partition_kernel((2, 2, 3, 3), (2, 2, 3, 3)))
    assert np.array_equal(W.data, wh.cells.data[0])


def test_scalar_assembly_example():
    wh = Warehouse("w", 2, (1, 1, 1, 1), False, cells=np.array([3.0, 5.0]).reshape(2, 1, 1, 1, 1))
    W = assemble_kernel(Tensor(np.array([[0.5, 0.5], [1.0, -1.0]])), wh, partition_kernel((2, 1, 1, 1), (1, 1, 1, 1)))
    assert W.data.reshape(-1).tolist() == [4.0, -2.0]


def test_assembly_shape_errors():
    wh = Warehouse("w", 2, (1, 1, 1, 1), False, np.random.default_rng(0))
    part = partition_kernel((2, 1, 1, 1), (1, 1, 1, 1))
    with pytest.raises(AssemblyError, match="rows"):
        assemble_kernel(Tensor(np.zeros((3, 2))), wh, part)
    with pytest.raises(AssemblyError, match="columns"):
        assemble_kernel(Tensor(np.zeros((2, 3))), wh, part)


def test_vectorised_assembly_matches_slot_loop():
    rng = np.random.default_rng(3)
    for kernel, cell in [((8, 4, 3, 3), (4, 2, 1, 1)), ((6, 6, 1, 1), (3, 3, 1, 1)), ((4, 8, 3, 3), (2, 4, 3, 1))]:
        part = partition_kernel(kernel, cell)
        for n, zero in [(part.m, False), (max(part.m // 2, 1), True)]:
            wh = Warehouse("w", n, cell, zero, rng)
            alpha = rng.normal(size=(part.m, wh.n_cols))
            W = assemble_kernel(Tensor(alpha), wh, part).data
            assert np.max(np.abs(W - tile_kernel(alpha, wh.cells.data, part))) <= 1e-12


def test_assembly_is_linear():
    rng = np.random.default_rng(4)
    part = partition_kernel((4, 4, 3, 3), (2, 2, 1, 1))
    wh = Warehouse("w", 10, (2, 2, 1, 1), True, rng)
    a1, a2 = rng.normal(size=(2, part.m, wh.n_cols))
    W = lambda a: assemble_kernel(Tensor(a), wh, part).data  # noqa: E731
    assert np.max(np.abs(W(2 * a1 - 3 * a2) - (2 * W(a1) - 3 * W(a2)))) <= 1e-12
    before = W(a1)
    wh.cells.data *= 2.5
    assert np.max(np.abs(W(a1) - 2.5 * before)) <= 1e-12


def test_zero_cell_column_never_contributes():
    rng = np.random.default_rng(5)
    part = partition_kernel((4, 2, 3, 3), (2, 2, 1, 1))
    wh = Warehouse("w", 9, (2, 2, 1, 1), True, rng)
    alpha = rng.normal(size=(part.m, wh.n_cols))
    shifted = alpha.copy()
    shifted[:, -1] += 100.0
    assert np.array_equal(assemble_kernel(Tensor(alpha), wh, part).data,
                          assemble_kernel(Tensor(shifted), wh, part).data)
    assert np.all(wh.cell(wh.n) == 0)


# --- forward ---------------------------------------------------------------

def test_zero_warehouse_gives_zero_output():
    (layer,), wh, _ = build_layers([(4, 3, 3, 3)], b=Fraction(1, 2), pad=1)
    wh.cells.data[...] = 0
    y = kw_forward(Tensor(np.random.default_rng(0).normal(size=(2, 3, 5, 5))), layer, 0.3)
    assert np.all(y.data == 0)


def test_reference_single_kernel_is_plain_conv():
    rng = np.random.default_rng(6)
    x, K = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(1, 4, 3, 3, 3))
    fc = [np.zeros((1, 3)), np.zeros(1), np.zeros((1, 1)), np.zeros(1)]
    y = reference_dynamic_conv(x, K, *fc, tau=1.0, beta=[1.0])
    assert np.max(np.abs(y - conv2d_naive(x, K[0]))) <= 1e-12
    assert np.all(reference_dynamic_conv(x, K, *fc, tau=0.0, beta=[1.0]) == 0)


def test_degeneration_matches_vanilla_dynamic_conv():
    rng = np.random.default_rng(7)
    fns = ["naf", "softmax", "sigmoid", "relu_norm"]
    for trial in range(24):
        f, c = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        k = int(rng.choice([1, 3]))
        n = int(rng.integers(1, 5))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        fn = fns[trial % 4]
        tau = float(rng.uniform())
        (layer,), wh, g = build_layers([(f, c, k, k)], cell=(f, c, k, k), b=n, fn=fn, seed=trial,
                                       stride=stride, pad=pad)
        assert (g.m_t, g.n) == (1, n)
        x = rng.normal(size=(2, c, 6, 6))
        y = kw_forward(Tensor(x), layer, tau).data
        att = layer.attention
        ref = reference_dynamic_conv(x, wh.cells.data, att.fc1_w.data, att.fc1_b.data, att.fc2_w.data,
                                     att.fc2_b.data, tau, layer.beta[0], fn, stride, pad)
        assert np.max(np.abs(y - ref)) <= 1e-10, trial


def test_static_limit_at_full_budget():
    layers, wh, g = build_layers([(8, 4, 3, 3), (8, 8, 1, 1)], b=1, pad=0)
    rng = np.random.default_rng(8)
    for layer in layers:
        c = layer.spec.in_channels
        x = rng.normal(size=(3, c, 5, 5))
        y = kw_forward(Tensor(x), layer, 1.0).data
        static = tile_kernel(layer.beta.astype(float), wh.cells.data, layer.partition)
        ref = ops.conv2d(Tensor(x), Tensor(static)).data
        assert np.max(np.abs(y - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_static_limit_at_half_budget_has_zero_blocks():
    layers, wh, g = build_layers([(8, 4, 3, 3)], b=Fraction(1, 2))
    layer = layers[0]
    assert g.has_zero_cell
    alpha = normalize_attention(Tensor(np.random.default_rng(0).normal(size=(layer.m, g.n_cols))), 1.0,
                                layer.beta).data
    W = assemble_kernel(Tensor(alpha), wh, layer.partition).data
    for i, beta_row in enumerate(layer.beta):
        block = W[layer.partition.block(i)]
        j = int(np.argmax(beta_row))
        if j == g.n:
            assert np.all(block == 0)
        else:
            assert np.array_equal(block, wh.cells.data[j])


def test_batch_permutation_equivariance():
    (layer,), _, _ = build_layers([(6, 3, 3, 3)], b=Fraction(1, 2), pad=1)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 3, 6, 6))
    perm = rng.permutation(5)
    y = kw_forward(Tensor(x), layer, 0.4).data
    assert np.array_equal(kw_forward(Tensor(x[perm]), layer, 0.4).data, y[perm])


# --- gradients -------------------------------------------------------------

def test_cell_gradient_at_init_limit_matches_static_conv():
    layers, wh, g = build_layers([(8, 4, 3, 3), (8, 8, 1, 1)], b=1)
    rng = np.random.default_rng(10)
    xs = [rng.normal(size=(2, l.spec.in_channels, 5, 5)) for l in layers]
    weights = [rng.normal(size=(2, 8, 3, 3)), rng.normal(size=(2, 8, 5, 5))]

    with GradTape() as tape:
        loss = ops.add(*[ops.sum(ops.mul(kw_forward(Tensor(x), l, 1.0), w))
                         for x, l, w in zip(xs, layers, weights)])
    kw_grad = backprop_gradients(tape, loss, [wh.cells])[wh.cells]

    expected = np.zeros_like(wh.cells.data)
    for x, l, w in zip(xs, layers, weights):
        static = Tensor(tile_kernel(l.beta.astype(float), wh.cells.data, l.partition), requires_grad=True)
        with GradTape() as tape:
            out = ops.sum(ops.mul(ops.conv2d(Tensor(x), static), w))
        gW = backprop_gradients(tape, out, [static])[static]
        for i, beta_row in enumerate(l.beta):
            expected[int(np.argmax(beta_row))] += gW[l.partition.block(i)]
    assert np.max(np.abs(kw_grad - expected)) <= 1e-10


def test_single_layer_finite_differences():
    (layer,), wh, _ = build_layers([(4, 8, 3, 3)], b=Fraction(1, 2), pad=1)
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(1, 8, 6, 6)))
    w = Tensor(rng.normal(size=(1, 4, 6, 6)))
    params = [wh.cells] + layer.parameters()
    for tau in (0.0, 0.37, 1.0):
        errs = finite_diff_errors(lambda: ops.sum(ops.mul(kw_forward(x, layer, tau), w)), params, eps=1e-6)
        assert max(errs) <= 1e-4, (tau, errs)


def test_two_layer_network_finite_differences():
    arch = arch_from_dict({
        "layers": [{"id": "a", "kernel": [6, 3, 3, 3], "stride": 1, "pad": 1, "kind": "standard", "warehouse_group": "g"},
                   {"id": "b", "kernel": [6, 6, 3, 3], "stride": 2, "pad": 1, "kind": "standard", "warehouse_group": "g"}],
        "groups": [{"name": "g", "cell_policy": "gcd"}]})
    plan = plan_warehouses(arch, Fraction(1, 2))
    g = plan.groups[0]
    rng = np.random.default_rng(12)
    wh = Warehouse.for_group(g, rng)
    la, lb = (KWConvLayer(s, g, wh, rng) for s in arch.layers)
    assert wh.shared_by == ["a", "b"]
    x = Tensor(rng.normal(size=(2, 3, 6, 6)))
    labels = np.array([1, 4])

    def loss(tau):
        h = ops.relu(kw_forward(x, la, tau))
        h = ops.relu(kw_forward(h, lb, tau))
        return ops.cross_entropy(ops.reshape(ops.global_avg_pool(h), (2, 6)), labels)

    weights = [la.attention.fc1_w, la.attention.fc2_w, lb.attention.fc1_w, lb.attention.fc2_w]
    biases = [la.attention.fc1_b, la.attention.fc2_b, lb.attention.fc1_b, lb.attention.fc2_b]
    for tau in (0.0, 0.37, 1.0):
        for fam in ([wh.cells], weights, biases):
            assert max(finite_diff_errors(lambda: loss(tau), fam, eps=1e-6)) <= 1e-4, tau
