import time
from dataclasses import replace

import numpy as np
import pytest

from dflasso.simulate import ExperimentConfig, fig1_config, fig2_config, run_experiment


class RunCache:
    """Monte Carlo runs shared across test modules, with wall-clock times."""

    def __init__(self):
        self._runs = {}

    def get(self, name):
        if name not in self._runs:
            cfg = PRESETS[name]()
            t = time.perf_counter()
            recs = run_experiment(cfg, threads=1)
            self._runs[name] = (cfg, recs, time.perf_counter() - t)
        return self._runs[name]


PRESETS = {
    # desk-scale bias regime: n=400, p=600, s0=24
    "fig1_s24": lambda: fig1_config(240, 0.1),
    # desk-scale calibration regime: s0=4
    "fig1_s4": lambda: fig1_config(40, 0.1),
    "fig1_s4_R500": lambda: fig1_config(40, 0.1, R=500, base_seed=10_000),
    "fig2": lambda: fig2_config(0.1),
    "unknown_sigma": lambda: ExperimentConfig(
        n=400, p=600, s0=8, score="estimated", a0_rule="canonical", a0_index=0, nu_rules=("shat",),
        scale_tag="unknown Sigma, a0=e_0"),
    "stein": lambda: ExperimentConfig(n=200, p=300, s0=10, R=500, variants=("ldpe_df",), nu_rules=("shat",),
                                      base_seed=20_000, scale_tag="SURE check"),
}


@pytest.fixture(scope="session")
def runs():
    return RunCache()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
