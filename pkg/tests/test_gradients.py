import numpy as np
import pytest
from gradient_cases import CASES, N_INSTANCES, TOLERANCE, instance

from chargrid.engine import Tensor, backward
from chargrid.engine.gradcheck import check_gradients, numeric_grad
from chargrid.net import ChargridNet, NetworkConfig


@pytest.mark.parametrize("name", sorted(CASES))
def test_finite_differences(name):
    worst = [check_gradients(*instance(name, k)) for k in range(N_INSTANCES)]
    assert max(worst) < TOLERANCE, f"{name}: worst relative error {max(worst):.2e}"


def test_numeric_grad_of_square():
    g = numeric_grad(lambda x: float(np.sum(x ** 2)), [np.array([3.0, -1.0])], 0)
    np.testing.assert_allclose(g, [6, -2], atol=1e-8)


def test_whole_network_sampled_coordinates():
    cfg = NetworkConfig(base_channels=2, n_vocab=3, n_anchors=1, input_h=16, input_w=8, dropout_p=0.2)
    net = ChargridNet(cfg, dtype=np.float64, seed=3)
    rng = np.random.default_rng(0)
    x = rng.random((2, 16, 8, 3))
    heads = [rng.standard_normal(s) for s in [(2, 16, 8, 9), (2, 16, 8, 2), (2, 16, 8, 4)]]
    # make the heads sensitive to their inputs
    for name, p in net.params.items():
        if ".head" in name or "_head" in name:
            p.data[...] = rng.standard_normal(p.shape) * 0.3

    def loss():
        net.rng = np.random.default_rng(11)
        outs = net.forward(Tensor(x), training=True)
        total = None
        for o, w in zip(outs, heads):
            from chargrid.engine import weighted_sum, add
            t = weighted_sum(o, w)
            total = t if total is None else add(total, t)
        return total

    net.zero_grad()
    backward(loss())
    for name in ["enc1.conv1.kernel", "enc3.conv2.gamma", "enc5.conv3.kernel", "seg.up1.upconv.kernel",
                 "box.up3.fuse.kernel", "seg.head.bias", "box.coord_head.kernel"]:
        p = net.params[name]
        flat = p.data.reshape(-1)
        for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + 1e-5
            fp = float(loss().data)
            flat[idx] = orig - 1e-5
            fm = float(loss().data)
            flat[idx] = orig
            num = (fp - fm) / 2e-5
            ana = p.grad.reshape(-1)[idx]
            assert abs(ana - num) <= 1e-4 * (abs(num) + 1e-6), (name, idx, ana, num)
