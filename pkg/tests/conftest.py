import dataclasses
from pathlib import Path

import pytest

from knobtuner.environment import (SyntheticEnv, WorkloadSpec,
                                   load_synthetic_spec)
from knobtuner.knobspace import HardwareProfile, load_catalog
from knobtuner.metrics import load_schema

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def repo_root():
    return ROOT


@pytest.fixture(scope="session")
def syn_catalog():
    return load_catalog(ROOT / "catalogs" / "synthetic50.json")


@pytest.fixture(scope="session")
def mysql_catalog():
    return load_catalog(ROOT / "catalogs" / "mysql266.json")


@pytest.fixture(scope="session")
def schema63():
    return load_schema(ROOT / "schemas" / "innodb63.json")


@pytest.fixture(scope="session")
def syn_spec(syn_catalog):
    return load_synthetic_spec(ROOT / "envspecs" / "synthetic50.json", syn_catalog)


@pytest.fixture(scope="session")
def hw64():
    return HardwareProfile(cpu_cores=12, ram_bytes=64 * 1024 ** 3,
                           disk_bytes=200 * 10 ** 9)


@pytest.fixture(scope="session")
def hw16():
    return HardwareProfile(cpu_cores=12, ram_bytes=16 * 1024 ** 3,
                           disk_bytes=120 * 10 ** 9)


@pytest.fixture(scope="session")
def workload_read():
    return WorkloadSpec(name="sysbench_read", read_fraction=1.0, threads=64,
                        duration_s=60, frame_interval_s=5)


@pytest.fixture()
def syn_env(syn_spec, syn_catalog, schema63):
    return SyntheticEnv(syn_spec, syn_catalog, schema63)


@pytest.fixture()
def syn_env_quiet(syn_spec, syn_catalog, schema63):
    """Noise-free variant of the shipped synthetic environment."""
    return SyntheticEnv(dataclasses.replace(syn_spec, noise_sd=0.0),
                        syn_catalog, schema63)
