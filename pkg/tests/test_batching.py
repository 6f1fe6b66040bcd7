"""
Tests para los muestreadores de lotes
"""
import pytest
import torch

from app.services import ConfigurationError
from app.services.batching import (
    ShuffledBatchSampler,
    balanced_source_batches,
    sequential_batches,
)


def test_balanced_batches_class_counts_differ_by_at_most_one():
    labels = torch.tensor([0] * 50 + [1] * 10 + [2] * 140)
    sampler = balanced_source_batches(labels, batch_size=32, seed=0, batches_per_epoch=20)
    for batch in sampler:
        assert len(batch) == 32
        counts = torch.bincount(labels[batch], minlength=3)
        assert counts.max() - counts.min() <= 1


def test_balanced_batches_are_deterministic_per_seed():
    labels = torch.arange(90) % 3
    first = list(balanced_source_batches(labels, 16, seed=5, batches_per_epoch=6))
    second = list(balanced_source_batches(labels, 16, seed=5, batches_per_epoch=6))
    other = list(balanced_source_batches(labels, 16, seed=6, batches_per_epoch=6))
    assert first == second
    assert first != other


def test_balanced_sampler_rejects_absent_class():
    labels = torch.tensor([0, 0, 2, 2])
    with pytest.raises(ConfigurationError):
        balanced_source_batches(labels, 2, seed=0, num_classes=3)


def test_shuffled_batches_cover_all_samples_once_per_pass():
    sampler = ShuffledBatchSampler(40, batch_size=10, seed=0)
    seen = [i for batch in sampler for i in batch]
    assert sorted(seen) == list(range(40))


def test_shuffled_batches_reshuffle_across_epochs():
    sampler = ShuffledBatchSampler(40, batch_size=10, seed=0)
    first = list(sampler)
    second = list(sampler)
    assert first != second
    assert sorted(i for b in second for i in b) == list(range(40))


def test_shuffled_batch_size_is_capped():
    sampler = ShuffledBatchSampler(5, batch_size=32, seed=0)
    assert list(map(len, sampler)) == [5]


def test_shuffled_sampler_rejects_empty_set():
    with pytest.raises(ConfigurationError):
        ShuffledBatchSampler(0, batch_size=4, seed=0)


def test_sequential_batches_keep_order():
    assert list(sequential_batches(7, 3)) == [[0, 1, 2], [3, 4, 5], [6]]
