"""Acceptance criteria, one test each.

Every test prints its criterion line; the lines are repeated in an
``acceptance`` section of the terminal summary.  Set
``UNISO_ACCEPTANCE_SCALE=quick`` for a fast smoke pass of the trained-model
criteria (those numbers are not meaningful at that scale).
"""

import os

import pytest

from uniso.harness.acceptance import CRITERIA, NEEDS_LAB, DeskScale, Lab

from conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def lab():
    scale = DeskScale.quick() if os.environ.get("UNISO_ACCEPTANCE_SCALE") == "quick" else DeskScale()
    return Lab(scale)


def _check(number, lab):
    res = CRITERIA[number](lab) if number in NEEDS_LAB else CRITERIA[number]()
    line = res.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert res.passed, line


def test_criterion_01_codec_exactness():
    _check(1, None)


def test_criterion_02_gradient_fidelity():
    _check(2, None)


def test_criterion_03_loss_oracles():
    _check(3, None)


def test_criterion_04_balancing_arithmetic():
    _check(4, None)


def test_criterion_05_searcher_soundness():
    _check(5, None)


def test_criterion_06_beats_dataset_best(lab):
    _check(6, lab)


def test_criterion_07_embedding_structure(lab):
    _check(7, lab)


def test_criterion_08_smoothness(lab):
    _check(8, lab)


def test_criterion_09_transfer(lab):
    _check(9, lab)


def test_criterion_10_ood_correlation(lab):
    _check(10, lab)


def test_criterion_11_determinism(lab):
    _check(11, lab)
