import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from uniso import substrate as S


def test_square_value_and_grad():
    x = torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
    (value,), grads = S.evaluate_and_backward(lambda: x * x, {"x": x})
    assert value.item() == 9.0
    assert grads["x"].item() == 6.0


def test_softmax_uniform():
    out = S.softmax(torch.zeros(3, dtype=torch.float64))
    assert torch.allclose(out, torch.full((3,), 1 / 3, dtype=torch.float64))


def test_cross_entropy_uniform_logits():
    logits = torch.zeros(5, 64, dtype=torch.float64)
    targets = torch.tensor([0, 7, 13, 40, 63])
    assert S.cross_entropy(logits, targets).item() == pytest.approx(math.log(64), abs=1e-12)
    assert math.log(64) == pytest.approx(4.158883, abs=1e-6)


def test_unreachable_params_get_no_grad():
    a = torch.ones(2, requires_grad=True)
    b = torch.ones(2, requires_grad=True)
    _, grads = S.evaluate_and_backward(lambda: (a * 2).sum(), {"a": a, "b": b})
    assert set(grads) == {"a"}


def test_non_scalar_loss_rejected():
    a = torch.ones(2, requires_grad=True)
    with pytest.raises(S.ShapeError):
        S.evaluate_and_backward(lambda: a * 2, {"a": a})


def test_non_finite_loss_names_step():
    a = torch.ones(2, requires_grad=True)
    with pytest.raises(S.NonFiniteError) as err:
        S.evaluate_and_backward(lambda: (a / 0).sum(), {"a": a}, step=7)
    assert err.value.step == 7 and "loss" in str(err.value)


def test_shape_errors_name_op():
    with pytest.raises(S.ShapeError, match="linear"):
        S.linear(torch.ones(2, 3), torch.ones(4, 5))
    with pytest.raises(S.ShapeError, match="squared_error"):
        S.squared_error(torch.ones(3), torch.ones(4))
    with pytest.raises(S.ShapeError, match="cosine_matrix"):
        S.cosine_matrix(torch.tensor([[1.0, 0.0], [0.0, 0.0]]))


def test_masked_mean_example():
    hidden = torch.tensor([[[1.0, 3.0], [3.0, 1.0]]])
    mask = torch.ones(1, 2, dtype=torch.bool)
    assert S.masked_mean(hidden, mask).tolist() == [[2.0, 2.0]]


def test_masked_mean_ignores_padding_and_rejects_empty_rows():
    hidden = torch.tensor([[[1.0], [5.0], [100.0]]])
    assert S.masked_mean(hidden, torch.tensor([[True, True, False]])).item() == 3.0
    with pytest.raises(S.ShapeError):
        S.masked_mean(hidden, torch.zeros(1, 3, dtype=torch.bool))


def test_rms_norm_matches_formula():
    x = torch.randn(4, 6, dtype=torch.float64)
    gain = torch.rand(6, dtype=torch.float64)
    xn, gn = x.numpy(), gain.numpy()
    ref = xn / np.sqrt((xn**2).mean(-1, keepdims=True) + 1e-6) * gn
    assert np.allclose(S.rms_norm(x, gain).numpy(), ref, atol=1e-12)


def test_batch_norm_training_and_running_stats():
    x = torch.randn(32, 5, dtype=torch.float64) * 3 + 2
    rm, rv = torch.zeros(5, dtype=torch.float64), torch.ones(5, dtype=torch.float64)
    out = S.batch_norm(x, torch.ones(5, dtype=torch.float64), torch.zeros(5, dtype=torch.float64), rm, rv, True)
    assert torch.allclose(out.mean(0), torch.zeros(5, dtype=torch.float64), atol=1e-5)
    assert torch.allclose(out.var(0, unbiased=False), torch.ones(5, dtype=torch.float64), atol=1e-4)
    assert torch.allclose(rm, 0.1 * x.mean(0))
    assert torch.allclose(rv, 0.9 + 0.1 * x.var(0, unbiased=False))
    frozen = S.batch_norm(x, torch.ones(5, dtype=torch.float64), torch.zeros(5, dtype=torch.float64), rm, rv, False)
    assert torch.allclose(frozen, (x - rm) / torch.sqrt(rv + 1e-5))


def test_grad_check_quadratic_is_tight():
    x = torch.randn(5, dtype=torch.float64, requires_grad=True)
    a = torch.randn(5, 5, dtype=torch.float64)
    assert S.grad_check(lambda: x @ a @ x, {"x": x}, eps=1e-4) <= 1e-8


def test_grad_check_rejects_bad_eps():
    x = torch.randn(2, dtype=torch.float64, requires_grad=True)
    with pytest.raises(ValueError):
        S.grad_check(lambda: (x**2).sum(), {"x": x}, eps=1e-2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_op_gradients(seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(3, 4, generator=g, dtype=torch.float64, requires_grad=True)
    w = torch.randn(5, 4, generator=g, dtype=torch.float64, requires_grad=True)
    gain = torch.rand(4, generator=g, dtype=torch.float64, requires_grad=True)
    mask = torch.tensor([[True, True, False]])
    params = {"x": x, "w": w, "gain": gain}

    def loss():
        h = torch.tanh(S.linear(S.rms_norm(x, gain), w))
        sm = S.softmax(h, -1)
        cos = S.cosine_matrix(x)
        pooled = S.masked_mean(h.unsqueeze(0), mask)
        return (sm * h).sum() + cos.exp().sum() + pooled.pow(2).sum()

    assert S.grad_check(loss, params, eps=1e-4) <= 1e-4


def test_adamw_first_step():
    store = S.ParamStore({"t": torch.zeros(1, dtype=torch.float64)})
    S.adamw_step(store, {"t": torch.ones(1, dtype=torch.float64)}, lr=0.1, wd=0.0)
    assert abs(store["t"].item() + 0.1) < 1e-6
    assert store.step == 1


def test_adamw_zero_grad_no_decay_is_identity():
    store = S.ParamStore({"t": torch.tensor([1.0, -2.0], dtype=torch.float64)})
    S.adamw_step(store, {"t": torch.zeros(2, dtype=torch.float64)}, lr=0.1, wd=0.0)
    assert store["t"].tolist() == [1.0, -2.0]


def test_adamw_decoupled_decay():
    store = S.ParamStore({"t": torch.ones(1, dtype=torch.float64)})
    S.adamw_step(store, {"t": torch.zeros(1, dtype=torch.float64)}, lr=0.1, wd=0.01)
    assert store["t"].item() == pytest.approx(0.999, abs=1e-12)


def test_adamw_monotone_against_constant_grad():
    store = S.ParamStore({"t": torch.zeros(3, dtype=torch.float64)})
    g = torch.tensor([1.0, -0.5, 2.0], dtype=torch.float64)
    prev = store["t"].clone()
    for _ in range(20):
        S.adamw_step(store, {"t": g}, lr=0.01, wd=0.0)
        assert torch.all(torch.sign(store["t"] - prev) == -torch.sign(g))
        prev = store["t"].clone()


def test_adamw_rejects_shape_mismatch_and_bad_lr():
    store = S.ParamStore({"t": torch.zeros(3)})
    with pytest.raises(S.ShapeError):
        S.adamw_step(store, {"t": torch.zeros(2)}, lr=0.1)
    with pytest.raises(ValueError):
        S.adamw_step(store, {"t": torch.zeros(3)}, lr=0.0)


def test_sgd_examples():
    store = S.ParamStore({"a": torch.tensor([1.0], dtype=torch.float64), "b": torch.tensor([1.0, 2.0], dtype=torch.float64)})
    S.sgd_step(store, {"a": torch.tensor([2.0], dtype=torch.float64)}, lr=0.5)
    assert store["a"].item() == 0.0
    S.sgd_step(store, {"b": torch.tensor([1.0, 1.0], dtype=torch.float64)}, lr=2e-5)
    assert store["b"].tolist() == pytest.approx([0.99998, 1.99998], abs=1e-15)
    S.sgd_step(store, {"b": torch.zeros(2, dtype=torch.float64)}, lr=0.1)
    assert store["b"].tolist() == pytest.approx([0.99998, 1.99998], abs=1e-15)


def test_cosine_lr_endpoints():
    assert S.cosine_lr(0, 10, 100, 1e-3) == 0.0
    assert S.cosine_lr(10, 10, 100, 1e-3) == pytest.approx(1e-3)
    assert S.cosine_lr(100, 10, 100, 1e-3) == pytest.approx(0.0, abs=1e-18)
    assert S.cosine_lr(5, 10, 100, 1e-3) == pytest.approx(5e-4)
    assert S.cosine_lr(55, 10, 100, 1e-3) == pytest.approx(5e-4)


def test_deterministic_forward():
    g = torch.Generator().manual_seed(3)
    x = torch.randn(4, 8, generator=g)
    w = torch.randn(6, 8, generator=g)
    assert torch.equal(S.linear(x, w), S.linear(x, w))
