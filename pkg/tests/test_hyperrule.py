import pytest
from hypothesis import given
from hypothesis import strategies as st

from minibit.hyperrule import DatasetProfile, HyperRuleDecision, decide, resolution_for

# (num_examples, shorter_side) -> (resize, crop, test, steps, mixup, alpha)
GRID = {
    (660, 32): (40, 32, 32, 500, False, 0.0),
    (660, 64): (80, 64, 64, 500, False, 0.0),
    (660, 96): (120, 96, 96, 500, False, 0.0),
    (660, 512): (256, 224, 224, 500, False, 0.0),
    (50_000, 32): (40, 32, 32, 10_000, True, 0.1),
    (50_000, 64): (80, 64, 64, 10_000, True, 0.1),
    (50_000, 96): (120, 96, 96, 10_000, True, 0.1),
    (50_000, 512): (256, 224, 224, 10_000, True, 0.1),
    (1_000_000, 32): (40, 32, 32, 20_000, True, 0.1),
    (1_000_000, 64): (80, 64, 64, 20_000, True, 0.1),
    (1_000_000, 96): (120, 96, 96, 20_000, True, 0.1),
    (1_000_000, 512): (256, 224, 224, 20_000, True, 0.1),
}


def check_grid():
    """Returns the mismatching grid cells (empty when the table is reproduced)."""
    bad = []
    for (n, side), (resize, crop, test, steps, mixup, alpha) in GRID.items():
        d = decide(DatasetProfile(n, side, 2))
        got = (d.resize, d.crop, d.test_resolution, d.schedule_steps, d.mixup_enabled, d.mixup_alpha)
        if got != (resize, crop, test, steps, mixup, alpha) or d.base_lr != 0.003 \
                or d.momentum != 0.9 or d.lr_milestone_fractions != (0.3, 0.6, 0.9):
            bad.append(((n, side), got))
    return bad


def test_grid():
    assert len(GRID) == 12
    assert check_grid() == []


@pytest.mark.parametrize("n,steps,mixup", [(1, 500, False), (19_999, 500, False), (20_000, 10_000, True),
                                           (500_000, 10_000, True), (500_001, 20_000, True)])
def test_regime_boundaries(n, steps, mixup):
    d = decide(DatasetProfile(n, 32))
    assert (d.schedule_steps, d.mixup_enabled) == (steps, mixup)


def test_json_keys_and_round_trip():
    d = decide(DatasetProfile(660, 224))
    j = d.to_json_dict()
    assert set(j) == {"resize", "crop", "test_resolution", "steps", "milestones", "mixup",
                      "mixup_alpha", "base_lr", "momentum"}
    assert j["mixup"] is False
    assert HyperRuleDecision.from_json_dict(j) == d
    assert d.milestone_steps() == [150, 300, 450]


def test_invalid_profile():
    with pytest.raises(ValueError):
        DatasetProfile(0, 32)


@given(st.integers(1, 2_000_000), st.integers(1, 2_000_000), st.integers(1, 4096))
def test_monotone_and_pure(a, b, side):
    lo, hi = sorted((a, b))
    assert decide(DatasetProfile(lo, side)).schedule_steps <= decide(DatasetProfile(hi, side)).schedule_steps
    assert decide(DatasetProfile(a, side)) == decide(DatasetProfile(a, side))
    assert decide(DatasetProfile(a, side)).mixup_enabled == (a >= 20_000)


@given(st.integers(1, 4096))
def test_crop_never_exceeds_resize(side):
    resize, crop = resolution_for(side)
    assert crop <= resize
