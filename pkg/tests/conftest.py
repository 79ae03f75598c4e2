"""Shared laws and helpers for the rmldp test suite."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from rmldp.config import get_settings
from rmldp.ensemble import make_ensemble, positive_example, scalar_ensemble
from rmldp.models import EnsembleKind, MatrixEnsemble, SphereChart, SphereDirection

E = math.e
E_NEG_SQRT2 = math.exp(-math.sqrt(2.0))


@pytest.fixture
def lattice_law() -> MatrixEnsemble:
    """Two atoms e and e^{-sqrt 2} with equal weights."""
    return scalar_ensemble([E, E_NEG_SQRT2], [0.5, 0.5])


@pytest.fixture
def scalar_law() -> MatrixEnsemble:
    """Three atoms whose logs 1, 0, -sqrt 2 span a non-lattice walk."""
    weights = np.array([math.exp(-1.0), 1.0, math.exp(math.sqrt(2.0))])
    return scalar_ensemble([E, 1.0, E_NEG_SQRT2], weights / weights.sum())


@pytest.fixture
def positive_law() -> MatrixEnsemble:
    return positive_example()


@pytest.fixture
def rotation_law() -> MatrixEnsemble:
    """Invertible 2x2 law with a rotation and a shear."""
    c, s = math.cos(0.7), math.sin(0.7)
    return make_ensemble(
        dim=2,
        kind=EnsembleKind.INVERTIBLE,
        atoms=[[[c, -s], [s, c]], [[2.0, 1.0], [0.0, 0.5]]],
        probs=[0.4, 0.6],
    )


@pytest.fixture
def scalar_start() -> SphereDirection:
    return SphereDirection(coords=[1.0], chart=SphereChart.POSITIVE_QUADRANT)


@pytest.fixture
def quadrant_start() -> SphereDirection:
    return SphereDirection(coords=np.ones(2) / math.sqrt(2.0), chart=SphereChart.POSITIVE_QUADRANT)


@pytest.fixture
def configs_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def small_blocks(monkeypatch):
    """Shrink the Monte Carlo block so a few thousand samples span several streams."""
    monkeypatch.setattr(get_settings(), "block_size", 256)


@pytest.fixture
def write_config(tmp_path):
    """Write an ensemble and an experiment config into tmp_path; returns the config path."""

    def write(ensemble: MatrixEnsemble, **fields) -> Path:
        ensemble_path = tmp_path / "ensemble.json"
        ensemble_path.write_text(json.dumps(ensemble.to_document()), encoding="utf-8")
        document = {"name": "test", "ensemble": "ensemble.json", "output_dir": str(tmp_path / "out")}
        document.update(fields)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return write
