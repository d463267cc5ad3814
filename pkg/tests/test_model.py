"""Model graph wiring: shapes, shared weights, residual merge, determinism."""

import numpy as np
import pytest

from finemotion import netspec
from finemotion.model import Model


@pytest.fixture(scope="module")
def tiny_inputs():
    rng = np.random.default_rng(0)
    return rng.uniform(0, 1, (3, 2, 32, 32))


def test_sf_forward_shape():
    m = Model(netspec.build_sf(32, 0.125))
    m.init_params(0)
    out = m.forward(np.random.default_rng(1).uniform(0, 1, (4, 32, 32)))
    assert out["probs"].shape == (4, 5)
    assert np.all((out["probs"] >= 0) & (out["probs"] <= 1))


def test_mf_forward_shape(tiny_inputs):
    m = Model(netspec.build_mf(2, 32, 0.125))
    m.init_params(0)
    out = m.forward(tiny_inputs)
    assert out["probs"].shape == (3, 2, 5)


def test_cbmf_forward_and_merge_probe(tiny_inputs):
    m = Model(netspec.build_cbmf(2, 32, 0.125))
    m.init_params(0)
    out = m.forward(tiny_inputs, internals=True)
    assert out["probs"].shape == (3, 2, 5)
    assert out["configs"].shape == (3, 2, 17)
    # the decoder merge input is exactly [configs | residual features]
    np.testing.assert_array_equal(out["merge_input"][:, :, :17], out["configs"])
    np.testing.assert_array_equal(out["merge_input"][:, :, 17:], out["residual"])


def test_shared_cnn_frame_permutation(tiny_inputs):
    m = Model(netspec.build_cbmf(2, 32, 0.125))
    m.init_params(0)
    cnn = [ls for ls in m.enc_specs
           if ls.kind not in ("gru", "concat_time")]

    def features(frames):
        return m._run_range(cnn, frames[..., None], False, None)

    B, k, N, _ = tiny_inputs.shape
    flat = tiny_inputs.reshape(B * k, N, N)
    fwd = features(flat)
    rev = features(flat[::-1])
    np.testing.assert_array_equal(fwd, rev[::-1])


def test_input_validation(tiny_inputs):
    m = Model(netspec.build_mf(2, 32, 0.125))
    m.init_params(0)
    with pytest.raises(ValueError, match="window length"):
        m.forward(np.zeros((1, 3, 32, 32)))
    with pytest.raises(ValueError):
        m.forward(np.zeros((1, 2, 16, 16)))


def test_forward_is_pure(tiny_inputs):
    m = Model(netspec.build_cbmf(2, 32, 0.125))
    m.init_params(5)
    a = m.forward(tiny_inputs)["probs"]
    b = m.forward(tiny_inputs)["probs"]
    np.testing.assert_array_equal(a, b)


def test_dropout_train_vs_infer(tiny_inputs):
    m = Model(netspec.build_mf(2, 32, 0.125))
    m.init_params(0)
    infer = m.forward(tiny_inputs)["probs"]
    train = m.forward(tiny_inputs, train=True,
                      rng=np.random.default_rng(3))["probs"]
    assert not np.array_equal(infer, train)
