import logging

import pytest

from dualstr.config import OptimConfig
from dualstr.errors import ContractError
from dualstr.training.schedule import LRSchedule, group_schedules


def test_reference_learning_rates():
    config = OptimConfig(batch=512)
    assert config.encoder_peak_lr == pytest.approx(8.4e-5)
    assert config.scratch_peak_lr / config.encoder_peak_lr == pytest.approx(19.0)


def test_encoder_lr_scales_with_batch():
    assert OptimConfig(batch=1024).encoder_peak_lr == pytest.approx(1.68e-4)
    assert OptimConfig(batch=32).encoder_peak_lr == pytest.approx(8.4e-5 / 16)


def test_schedule_endpoints():
    schedule = LRSchedule(1.0, 100, 10)
    assert schedule.lr_at(0) == 0.0
    assert schedule.lr_at(5) == pytest.approx(0.5)
    assert schedule.lr_at(10) == pytest.approx(1.0)
    assert schedule.lr_at(55) == pytest.approx(0.5)
    assert schedule.lr_at(100) == pytest.approx(0.0, abs=1e-12)


def test_schedule_is_monotone_after_warmup():
    schedule = LRSchedule.from_fraction(2e-3, 200, 0.075)
    assert schedule.warmup_steps == 15
    values = [schedule.lr_at(s) for s in range(15, 201)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_steps_past_the_end_clamp_with_a_warning(caplog):
    schedule = LRSchedule(1.0, 10, 2)
    with caplog.at_level(logging.WARNING, logger="dualstr.training.schedule"):
        assert schedule.lr_at(11) == 0.0
    assert "past the schedule end" in caplog.text


def test_invalid_schedules():
    with pytest.raises(ContractError):
        LRSchedule(1.0, 0, 1)
    with pytest.raises(ContractError):
        LRSchedule(1.0, 10, 11)
    with pytest.raises(ContractError):
        LRSchedule(1.0, 10, 2).lr_at(-1)


def test_group_schedules_share_warmup():
    schedules = group_schedules(OptimConfig(batch=512), 1000)
    assert schedules["encoder"].warmup_steps == schedules["scratch"].warmup_steps == 75
    assert schedules["scratch"].lr_at(75) == pytest.approx(8.4e-5 * 19.0)
