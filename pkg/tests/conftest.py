"""Shared fixtures: the bundled experiment setup and expensive session artifacts."""

import time

import pytest

from pilotfree import (care_value_iteration, default_linear_ofdm_config,
                       default_sigma_bar)
from pilotfree.harness import _prepare_runtime, measure_signal_power, snr_sweep


@pytest.fixture(scope="session")
def linear_cfg():
    return default_linear_ofdm_config()


@pytest.fixture(scope="session")
def linear_model(linear_cfg):
    return linear_cfg.plant_model()


@pytest.fixture(scope="session")
def solved_table(linear_cfg, linear_model):
    """Offline kernel table for the bundled linear experiment, with solve time."""
    sigma_bar = default_sigma_bar(linear_cfg.channel_process(), linear_cfg.n_sub)
    t0 = time.time()
    table, iters = care_value_iteration(linear_model, linear_cfg.quant_grid(),
                                        linear_cfg.alpha, sigma_bar)
    return {"table": table, "iterations": iters, "seconds": time.time() - t0}


@pytest.fixture(scope="session")
def calibrated_power(linear_cfg, solved_table):
    rt = _prepare_runtime(linear_cfg, solved_table["table"])
    return measure_signal_power(linear_cfg, rt)


@pytest.fixture(scope="session")
def predictor_sweeps(linear_cfg, solved_table, calibrated_power):
    """One 200-trial sweep per linear channel predictor, on the shared noise axis."""
    out = {}
    t0 = time.time()
    for kind in ("kf", "ls", "blind-svd", "interpolated-ls"):
        cfg = default_linear_ofdm_config(predictor=kind)
        out[kind] = snr_sweep(cfg, table=solved_table["table"],
                              signal_power=calibrated_power)
    out["seconds"] = time.time() - t0
    return out
