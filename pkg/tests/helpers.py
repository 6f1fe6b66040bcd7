"""
Constructores reutilizados por los tests
"""
import torch

from app.models.data import Domain
from app.models.networks import ClassifierInput, build_architecture, build_bundle
from app.services.masking import apply_mask
from app.services.training_service import TrainingData


def make_training_data(synthetic_raw, mask, full_target: bool = False) -> TrainingData:
    source_raw, target_raw, _ = synthetic_raw
    domains = () if full_target else (Domain.TARGET,)
    source = apply_mask(source_raw, mask, domains)
    target = apply_mask(target_raw, mask, domains)
    return TrainingData(
        source_train=source.subset(range(0, 250)),
        source_val=source.subset(range(250, 300)),
        target_train=target.without_labels(),
        target_test=target,
        target_train_labels=target.labels,
    )


def make_bundle(mask, seed: int = 0, classifier_input=ClassifierInput.JOINT):
    spec = build_architecture("synthetic", "synthetic", mask.sample_shape, 3,
                              classifier_input=classifier_input)
    return build_bundle(spec, mask, seed)


def assert_same_parameters(a, b):
    for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(pa, pb), name
