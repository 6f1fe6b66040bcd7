"""
Tests para máscaras fijas y separación en componentes
"""
import pytest
import torch

from app.models.data import Domain, FixedMask, RawDataset
from app.services import ConfigurationError, ContractViolationError
from app.services.masking import apply_mask, make_column_mask, make_horizontal_patch_mask


def test_half_patch_removes_bottom_rows():
    """Parche de 0.5 sobre 32x32: 16 filas inferiores"""
    mask = make_horizontal_patch_mask((1, 32, 32), 0.5)

    grid = mask.mask.view(1, 32, 32)
    assert mask.n_missing == 16 * 32
    assert grid[:, 16:, :].all()
    assert not grid[:, :16, :].any()
    assert mask.block_descriptor["start"] == 16


def test_patch_rows_use_floor():
    """0.3 * 32 = 9.6 filas -> 9"""
    mask = make_horizontal_patch_mask((3, 32, 32), 0.3)
    assert mask.n_missing == 9 * 32 * 3


def test_zero_fraction_is_full_data():
    mask = make_horizontal_patch_mask((1, 32, 32), 0.0)
    assert mask.is_full
    assert mask.n_observed == 32 * 32


def test_patch_fraction_out_of_range():
    with pytest.raises(ContractViolationError):
        make_horizontal_patch_mask((1, 32, 32), 1.5)


def test_mask_must_keep_observed_entries():
    with pytest.raises(ConfigurationError, match="patch_fraction = 1"):
        make_horizontal_patch_mask((1, 32, 32), 1.0)
    with pytest.raises(ConfigurationError, match="at least one observed"):
        make_horizontal_patch_mask((1, 4, 4), 1.0)


def test_split_and_merge_recover_sample():
    mask = make_horizontal_patch_mask((1, 8, 8), 0.25)
    x = torch.randn(5, 1, 8, 8)

    x1, x2 = mask.split(x)
    assert x1.shape == (5, 48)
    assert x2.shape == (5, 16)
    assert torch.equal(mask.merge(x1, x2).view(5, 1, 8, 8), x)


def test_column_mask_trailing_fraction():
    mask = make_column_mask(8, fraction=0.5)
    assert mask.missing_index.tolist() == [4, 5, 6, 7]


def test_column_mask_explicit_columns():
    mask = make_column_mask(5, [1, 3], column_names=["a", "b", "c", "d", "e"])
    assert mask.missing_index.tolist() == [1, 3]
    assert mask.block_descriptor["names"] == ["b", "d"]


def test_column_mask_rejects_out_of_range():
    with pytest.raises(ConfigurationError):
        make_column_mask(4, [4])


def test_mask_descriptor_restores_same_mask():
    mask = make_horizontal_patch_mask((3, 16, 16), 0.5)
    assert FixedMask.from_dict(mask.to_dict()) == mask


def test_apply_mask_zero_fills_target_only():
    """El objetivo pierde x2; la fuente conserva ambas componentes"""
    mask = make_column_mask(6, fraction=0.5)
    x = torch.arange(24, dtype=torch.float32).view(4, 6) + 1
    source = apply_mask(RawDataset(x, torch.zeros(4).long(), Domain.SOURCE, "toy", 2), mask)
    target = apply_mask(RawDataset(x, None, Domain.TARGET, "toy", 2), mask)

    assert source.x2_observed
    assert torch.equal(source.x2, x[:, 3:])
    assert not target.x2_observed
    assert torch.count_nonzero(target.x2) == 0
    assert torch.equal(target.x1, x[:, :3])


def test_apply_mask_keeps_target_for_full_variants():
    mask = make_column_mask(6, fraction=0.5)
    x = torch.randn(4, 6)
    target = apply_mask(RawDataset(x, None, Domain.TARGET, "toy", 2), mask, domains_to_mask=())
    assert target.x2_observed
    assert torch.equal(target.x2, x[:, 3:])


def test_apply_mask_rejects_wrong_width():
    mask = make_column_mask(5, fraction=0.4)
    with pytest.raises(ConfigurationError):
        apply_mask(RawDataset(torch.randn(3, 6), None, Domain.TARGET, "toy", 2), mask)
