import numpy as np
import pytest

from robustlab import ViTConfig
from robustlab import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# small transformer geometry so finite-difference sweeps stay fast
TINY_VIT = ViTConfig(image_size=8, patch_size=4, channels=3, embed_dim=8,
                     depth=1, heads=2, mlp_dim=16, num_classes=2)


def fd_param_error(model, loss_fn, param, h=1e-3, coords=None):
    """Central-difference check of d loss / d param against the backward pass.

    Returns max over the swept coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    model.zero_grad()
    loss = loss_fn()
    T.backward(loss)
    analytic = param.grad.reshape(-1).copy()
    flat = param.data.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    hf = np.float32(h)
    with T.no_grad():
        for i in indices:
            keep = flat[i]
            flat[i] = keep + hf
            fp = float(loss_fn().data)
            flat[i] = keep - hf
            fm = float(loss_fn().data)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * float(hf))
            err = abs(float(analytic[i]) - numeric) / max(1.0, abs(float(analytic[i])))
            worst = max(worst, err)
    return worst
