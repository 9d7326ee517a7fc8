import numpy as np
import pytest
import torch

from gled.errors import ContractError, NumericalError, PersistenceError
from gled.neuralcore import (
    AdamConfig,
    Conv1dPeriodic,
    LayerNorm,
    Linear,
    ParamStore,
    adam_step,
    load_checkpoint,
    make_rng,
    normal,
    ops,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint,
)

from helpers import fd_check

SEEDS = range(100)
TOL = 1e-5


def _r(rng, *shape):
    return torch.from_numpy(rng.standard_normal(shape))


# (name, input builder, function of the inputs)
PRIMITIVES = {
    "matmul": (lambda g: [_r(g, 3, 4), _r(g, 4, 5)], lambda a, b: ops.matmul(a, b)),
    "add": (lambda g: [_r(g, 3, 4), _r(g, 4)], lambda a, b: ops.add(a, b)),
    "mul": (lambda g: [_r(g, 3, 4), _r(g, 3, 4)], lambda a, b: ops.mul(a, b)),
    "scale": (lambda g: [_r(g, 5)], lambda a: ops.scale(a, -1.7)),
    "relu": (lambda g: [_r(g, 6, 3)], lambda a: ops.relu(a)),
    "softmax": (lambda g: [_r(g, 4, 7)], lambda a: ops.softmax(a, axis=-1)),
    "layer_norm": (lambda g: [_r(g, 3, 8), _r(g, 8), _r(g, 8)], lambda a, w, b: ops.layer_norm(a, 1e-5, w, b)),
    "conv1d_periodic": (lambda g: [_r(g, 2, 3, 9), _r(g, 4, 3, 5), _r(g, 4)], lambda x, w, b: ops.conv1d_periodic(x, w, b)),
    "linear": (lambda g: [_r(g, 5, 3), _r(g, 4, 3), _r(g, 4)], lambda x, w, b: ops.linear(x, w, b)),
    "mean": (lambda g: [_r(g, 3, 4)], lambda a: ops.mean(a, axis=1)),
    "sum": (lambda g: [_r(g, 3, 4)], lambda a: ops.sum(a, axis=0)),
    "l2_norm": (lambda g: [_r(g, 3, 4)], lambda a: ops.l2_norm(a, axis=1)),
    "concat": (lambda g: [_r(g, 2, 3), _r(g, 2, 5)], lambda a, b: ops.concat([a, b], axis=1)),
    "slice": (lambda g: [_r(g, 4, 6)], lambda a: ops.slice(a, 1, 2, 3)),
    "sinusoidal_embed": (lambda g: [torch.from_numpy(g.uniform(0, 20, size=5))], lambda i: ops.sinusoidal_embed(i, 8, dtype=torch.float64)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    build, fn = PRIMITIVES[name]
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        worst = max(worst, fd_check(fn, build(rng), rng))
    assert worst <= TOL, f"{name}: worst relative error {worst:.2e}"


def test_relu_values():
    np.testing.assert_array_equal(ops.relu(torch.tensor([-1.0, 2.0])).numpy(), [0.0, 2.0])


def test_softmax_singleton_and_empty():
    assert ops.softmax(torch.tensor([[3.0]]), axis=-1).item() == 1.0
    with pytest.raises(ContractError):
        ops.softmax(torch.zeros(2, 0), axis=-1)


def test_layer_norm_constant():
    out = ops.layer_norm(torch.full((5,), 3.0), eps=1e-5)
    assert torch.equal(out, torch.zeros(5))


def test_shape_contracts():
    with pytest.raises(ContractError):
        ops.matmul(torch.zeros(2, 3), torch.zeros(4, 2))
    with pytest.raises(ContractError):
        ops.add(torch.zeros(2, 3), torch.zeros(4))
    with pytest.raises(ContractError):
        ops.conv1d_periodic(torch.zeros(1, 2, 8), torch.zeros(3, 2, 4))
    with pytest.raises(ContractError):
        ops.concat([torch.zeros(2, 3), torch.zeros(3, 3)], axis=1)
    with pytest.raises(ContractError):
        ops.slice(torch.zeros(4), 0, 3, 2)


def test_conv_wraps_and_is_shift_equivariant():
    rng = np.random.default_rng(0)
    x, w = _r(rng, 2, 3, 11), _r(rng, 4, 3, 5)
    y = ops.conv1d_periodic(x, w)
    for shift in (1, 3, 10):
        ys = ops.conv1d_periodic(torch.roll(x, shift, dims=-1), w)
        torch.testing.assert_close(ys, torch.roll(y, shift, dims=-1), rtol=0, atol=1e-12)
    # an impulse at index 0 spreads to both ends of the signal
    imp = torch.zeros(1, 1, 7, dtype=torch.float64)
    imp[0, 0, 0] = 1.0
    out = ops.conv1d_periodic(imp, torch.ones(1, 1, 3, dtype=torch.float64))[0, 0]
    np.testing.assert_array_equal(out.numpy(), [1, 1, 0, 0, 0, 0, 1])


def test_backward_examples():
    x = torch.tensor([3.0, 4.0], dtype=torch.float64, requires_grad=True)
    ops.backward(ops.l2_norm(x) ** 2)
    np.testing.assert_allclose(x.grad.numpy(), [6.0, 8.0])
    y = torch.zeros(2, 3, requires_grad=True)
    ops.backward(ops.sum(y))
    assert torch.equal(y.grad, torch.ones(2, 3))
    with pytest.raises(ContractError):
        ops.backward(torch.zeros(2, requires_grad=True) * 1.0)
    with pytest.raises(NumericalError):
        ops.backward(torch.tensor(float("nan"), requires_grad=True) * 1.0)


def test_two_layer_net_gradient():
    for seed in range(20):
        rng = make_rng(seed)
        l1, l2 = Linear(5, 7, rng).double(), Linear(7, 2, rng).double()
        x = torch.from_numpy(np.random.default_rng(seed).standard_normal((4, 5)))
        net = torch.nn.Sequential(l1, torch.nn.ReLU(), l2)
        err = fd_check(lambda inp: net(inp), [x], np.random.default_rng(seed + 1000))
        assert err <= TOL


def _quadratic_store(w0=1.0):
    w = torch.nn.Parameter(torch.tensor([w0]))
    return w, ParamStore({"w": w})


def test_adam_descends_and_counts():
    w, store = _quadratic_store()
    ops.backward((w**2).sum())
    adam_step(store, AdamConfig(lr=0.1))
    assert 0.0 < w.item() < 1.0 and store.step_count == 1 and w.grad is None


def test_adam_zero_grad_keeps_params():
    w, store = _quadratic_store(0.5)
    w.grad = torch.zeros_like(w)
    adam_step(store)
    assert w.item() == 0.5 and store.step_count == 1


def test_adam_missing_grad():
    _, store = _quadratic_store()
    with pytest.raises(ContractError):
        adam_step(store)


def test_adam_deterministic():
    results = []
    for _ in range(2):
        lin = Linear(4, 3, make_rng(5))
        store = ParamStore.from_module(lin)
        for step in range(3):
            x = normal(make_rng(9, step), (6, 4))
            ops.backward(ops.mean(lin(x) ** 2))
            adam_step(store, clip_norm=0.5)
        results.append(write_checkpoint(dict(lin.named_parameters())))
    assert results[0] == results[1]


def test_rng_streams():
    a = normal(make_rng(1, 2), (4,))
    assert torch.equal(a, normal(make_rng(1, 2), (4,)))
    assert not torch.equal(a, normal(make_rng(1, 3), (4,)))


def test_checkpoint_roundtrip(tmp_path):
    rng = make_rng(0)
    mod = torch.nn.Sequential(Linear(3, 4, rng), LayerNorm(4), Conv1dPeriodic(2, 2, rng, 3))
    path = save_checkpoint(mod, tmp_path / "m.ckpt")
    buf = path.read_bytes()
    assert buf[:4] == b"GLCK"
    other = torch.nn.Sequential(Linear(3, 4, make_rng(1)), LayerNorm(4), Conv1dPeriodic(2, 2, make_rng(1), 3))
    load_checkpoint(other, path)
    for (ka, a), (kb, b) in zip(mod.named_parameters(), other.named_parameters()):
        assert ka == kb and torch.equal(a, b)
    assert save_checkpoint(other, tmp_path / "o.ckpt").read_bytes() == buf
    tensors = read_checkpoint(buf)
    assert set(tensors) == {k for k, _ in mod.named_parameters()}


def test_checkpoint_mismatch_and_corruption(tmp_path):
    path = save_checkpoint(Linear(3, 4, make_rng(0)), tmp_path / "m.ckpt")
    with pytest.raises(ContractError):
        load_checkpoint(Linear(3, 5, make_rng(0)), path)
    with pytest.raises(PersistenceError):
        read_checkpoint(path.read_bytes()[:-2])
    with pytest.raises(PersistenceError):
        read_checkpoint(b"NOPE" + path.read_bytes()[4:])
