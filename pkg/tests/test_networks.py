"""
Tests para los componentes paramétricos, la GRL y los checkpoints
"""
import pytest
import torch

from app.models.data import DatasetName
from app.models.networks import (
    ArchitectureFamily,
    ClassifierInput,
    ComponentBundle,
    GradientReversal,
    Provenance,
    build_architecture,
    grl_apply,
)
from app.services import ConfigurationError, ContractViolationError
from app.services.masking import make_horizontal_patch_mask
from tests.helpers import assert_same_parameters, make_bundle


def test_grl_is_identity_forward():
    x = torch.randn(4, 3)
    assert torch.equal(grl_apply(x, 0.7), x)


def test_grl_gradient_is_negated_and_scaled():
    x = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
    grl_apply(x, 0.5).sum().backward()
    assert torch.allclose(x.grad, torch.full_like(x, -0.5))


def test_grl_gradient_against_finite_differences():
    """El gradiente analítico es -scale por el numérico de la identidad"""
    x = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
    weights = torch.randn(3, 2, dtype=torch.float64)
    scale = 0.25
    (analytic,) = torch.autograd.grad((grl_apply(x, scale) * weights).sum(), x)

    h = 1e-6
    numeric = torch.zeros_like(x)
    with torch.no_grad():
        for i in range(3):
            for j in range(2):
                step = torch.zeros_like(x)
                step[i, j] = h
                up = (grl_apply(x + step, scale) * weights).sum()
                down = (grl_apply(x - step, scale) * weights).sum()
                numeric[i, j] = (up - down) / (2 * h)
    assert torch.allclose(analytic, -scale * numeric, atol=1e-6)


def test_grl_scale_out_of_range():
    with pytest.raises(ContractViolationError):
        grl_apply(torch.zeros(2), 1.5)
    with pytest.raises(ContractViolationError):
        GradientReversal(-0.1)(torch.zeros(2))


def test_architecture_by_pair():
    spec = build_architecture(DatasetName.USPS, DatasetName.MNIST, (1, 32, 32), 10)
    assert spec.family == ArchitectureFamily.CONV_DIGITS
    assert spec.discriminator_width == 512 and spec.discriminator_layers == 2
    assert spec.d1 == 128 * 4 * 4

    svhn = build_architecture(DatasetName.SVHN, DatasetName.MNIST, (3, 32, 32), 10)
    assert svhn.generator_layers == 3
    assert svhn.discriminator_layers == 1

    tabular = build_architecture(DatasetName.SYNTHETIC, DatasetName.SYNTHETIC, (8,), 3)
    assert tabular.family == ArchitectureFamily.MLP_TABULAR


def test_encoder_shapes(bundle, training_data):
    batch = training_data.source_train.batch(range(16))
    full = bundle.encode_full(batch)
    hat = bundle.encode_hat(batch.x1)
    zero = bundle.encode_zero(batch.x1)
    d = bundle.spec.d1
    assert full.z1.shape == (16, d) and full.z2.shape == (16, d)
    assert hat.provenance == Provenance.GENERATED and hat.z2.shape == (16, d)
    assert zero.provenance == Provenance.ZERO_FILLED
    probs = bundle.classify(full)
    assert probs.shape == (16, 3)
    assert torch.allclose(probs.sum(dim=1), torch.ones(16), atol=1e-5)


def test_encode_full_rejects_masked_batch(bundle, training_data):
    batch = training_data.target_train.batch(range(8))
    assert not batch.x2_observed
    with pytest.raises(ContractViolationError):
        bundle.encode_full(batch)


def test_observed_only_classifier(synthetic_mask, training_data):
    bundle = make_bundle(synthetic_mask, classifier_input=ClassifierInput.OBSERVED_ONLY)
    latent = bundle.encode_observed_only(training_data.source_train.x1[:8])
    assert bundle.classify(latent).shape == (8, 3)
    assert bundle.domain_input(latent).shape == (8, bundle.spec.d1)


def test_conv_bundle_on_patch_mask():
    mask = make_horizontal_patch_mask((1, 16, 16), 0.5)
    spec = build_architecture(DatasetName.MNIST, DatasetName.USPS, (1, 16, 16), 10)
    bundle = ComponentBundle(spec, mask).eval()
    x1 = torch.rand(4, mask.n_observed)
    hat = bundle.encode_hat(x1)
    assert hat.z1.shape == (4, spec.d1)
    assert bundle.classify(hat).shape == (4, 10)


def test_mask_shape_mismatch():
    mask = make_horizontal_patch_mask((1, 16, 16), 0.5)
    spec = build_architecture(DatasetName.MNIST, DatasetName.USPS, (1, 32, 32), 10)
    with pytest.raises(ConfigurationError):
        ComponentBundle(spec, mask)


def test_same_seed_same_initialization(synthetic_mask):
    assert_same_parameters(make_bundle(synthetic_mask, seed=4), make_bundle(synthetic_mask, seed=4))


def test_checkpoint_restores_predictions(bundle, training_data):
    bundle.eval()
    batch = training_data.source_train.batch(range(10))
    expected = bundle.classify(bundle.encode_full(batch))

    restored = ComponentBundle.from_checkpoint(bundle.to_checkpoint(seed=0)).eval()
    assert restored.mask == bundle.mask
    assert torch.equal(restored.classify(restored.encode_full(batch)), expected)


def test_checkpoint_does_not_share_storage(bundle):
    payload = bundle.to_checkpoint(seed=0)
    with torch.no_grad():
        for p in bundle.parameters():
            p.add_(1.0)
    restored = ComponentBundle.from_checkpoint(payload)
    first = next(bundle.parameters())
    assert not torch.equal(next(restored.parameters()), first)


def test_grl_backward_gradcheck():
    """La retropropagación de la GRL es lineal en el gradiente entrante"""
    x = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)

    def reversed_gradient(grad_output):
        (grad,) = torch.autograd.grad(grl_apply(x, 0.3), x, grad_outputs=grad_output, create_graph=True)
        return grad

    g = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(reversed_gradient, (g,))
    assert torch.allclose(reversed_gradient(g), -0.3 * g)
