"""Shared fixtures.

The closed-loop runs (lock, temperature step) are the expensive parts of the
suite, so they execute once per session and are shared between the unit
tests and the acceptance suite.
"""

from dataclasses import replace

import pytest

from saslock.harness import (
    load_default_config,
    run_fluorescence_experiment,
    run_lock_experiment,
    run_sweep_experiment,
    run_temp_step_experiment,
)
from saslock.spectrum import NoiseConfig, synthesize_sweep


@pytest.fixture(scope="session")
def default_cfg():
    return load_default_config()


@pytest.fixture(scope="session")
def table(default_cfg):
    return default_cfg.load_table()


@pytest.fixture(scope="session")
def noise_off_cfg(default_cfg):
    return replace(default_cfg, noise=replace(default_cfg.noise, enabled=False))


@pytest.fixture(scope="session")
def clean_trace(table, default_cfg):
    return synthesize_sweep(table, default_cfg.medium, default_cfg.sweep, NoiseConfig())


@pytest.fixture(scope="session")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("bench")


@pytest.fixture(scope="session")
def sweep_run(default_cfg, out_root):
    out = out_root / "sweep"
    return run_sweep_experiment(default_cfg, out), out


@pytest.fixture(scope="session")
def sweep_rerun(default_cfg, out_root):
    out = out_root / "sweep_rerun"
    return run_sweep_experiment(default_cfg, out), out


@pytest.fixture(scope="session")
def lock_run(default_cfg, out_root):
    out = out_root / "lock"
    return run_lock_experiment(default_cfg, out), out


@pytest.fixture(scope="session")
def lock_rerun(default_cfg, out_root):
    out = out_root / "lock_rerun"
    return run_lock_experiment(default_cfg, out), out


@pytest.fixture(scope="session")
def temp_step_pos(default_cfg, out_root):
    out = out_root / "temp_step_pos"
    return run_temp_step_experiment(default_cfg, out), out


@pytest.fixture(scope="session")
def temp_step_neg(default_cfg, out_root):
    cfg = replace(default_cfg, run=replace(default_cfg.run, temp_step_k=-0.1))
    out = out_root / "temp_step_neg"
    return run_temp_step_experiment(cfg, out), out


@pytest.fixture(scope="session")
def fluorescence_run(default_cfg, out_root):
    out = out_root / "fluorescence"
    return run_fluorescence_experiment(default_cfg, out), out


@pytest.fixture(scope="session")
def fluorescence_rerun(default_cfg, out_root):
    out = out_root / "fluorescence_rerun"
    return run_fluorescence_experiment(default_cfg, out), out
