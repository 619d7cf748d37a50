import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from karma.dataset import write_generic_csv, write_manifest
from karma.synthetic import synthetic_fleet
from karma.vmd import VmdConfig

settings.register_profile("karma", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("karma")

# sinusoid fixtures need the dual step for exact reconstruction: the even
# mirror extension leaks a little energy that the penalty alone would drop
FIXTURE_VMD = dict(alpha=2000.0, tau=1.0, tol=1e-9, max_iters=2000)


def two_tone(phase=(0.0, 0.0)):
    """2 Hz + 25 Hz sampled at 100 Hz for 5 s."""
    t = np.arange(500) / 100
    return np.sin(2 * np.pi * 2 * t + phase[0]) + np.sin(2 * np.pi * 25 * t + phase[1])


def fixture_cfg(k_max):
    return VmdConfig(k_max=k_max, **FIXTURE_VMD)


@pytest.fixture
def fleet_dir(tmp_path):
    """Four synthetic 2 Ah cells written as generic CSVs plus a manifest."""
    fleet = synthetic_fleet()
    entries = {}
    for s in fleet:
        path = tmp_path / f"{s.battery_id}.csv"
        write_generic_csv(s, path)
        entries[s.battery_id] = (path.name, 2.0)
    write_manifest(tmp_path / "fleet.ini", entries)
    return tmp_path


def file_digest(path):
    import hashlib
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def tree_digest(root):
    """Digest of every file below ``root`` keyed by relative path."""
    out = {}
    for base, _, files in os.walk(root):
        for name in files:
            full = os.path.join(base, name)
            out[os.path.relpath(full, root)] = file_digest(full)
    return out
