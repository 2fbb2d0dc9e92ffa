import pytest

from cvcap.rae import Variant
from gradcheck import max_relative_error, model_loss_fn, tiny_batch, tiny_model


@pytest.mark.parametrize("variant", list(Variant), ids=[v.value for v in Variant])
def test_full_loss_gradients(variant):
    model = tiny_model(variant, seed=1)
    p_i, p_r, caps = tiny_batch(1)
    fn = model_loss_fn(model, p_i, p_r if variant.uses_residuals else None, caps)
    assert max_relative_error(fn, model.parameters()) < 1e-4
