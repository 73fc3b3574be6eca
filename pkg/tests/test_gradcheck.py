from __future__ import annotations

import pytest

from tass.errors import ConfigError
from tass.gradcheck import PROBES, run_gradcheck


@pytest.mark.parametrize("probe", sorted(PROBES))
def test_probe_passes(probe):
    reports = run_gradcheck([0], tolerance=1e-5, probes=[probe])
    assert reports
    failed = [(r.label, r.max_rel_err, r.max_abs_err) for r in reports if not r.passed]
    assert failed == []


def test_unknown_probe_is_a_config_error():
    with pytest.raises(ConfigError, match="nope"):
        run_gradcheck([0], probes=["matmul", "nope"])


def test_reports_are_labelled_by_probe_and_tensor():
    labels = [r.label for r in run_gradcheck([1], probes=["matmul"])]
    assert labels == ["matmul:a", "matmul:b"]


@pytest.mark.slow
def test_end_to_end_over_ten_seeds():
    reports = run_gradcheck(range(10), tolerance=1e-5, probes=["end_to_end"])
    assert all(r.passed for r in reports)
