"""Criterion 10: regenerate the reference figures from staged simulator outputs.

Runs against the files the primary acceptance suite stages under
``out/acceptance7``; skipped when those outputs have not been produced yet.
"""

import os

import pytest

from qbmplots.figures import FigureSpec, render

ACCEPT_OUT = os.path.join(
    os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))), "out", "acceptance7"
)

pytestmark = pytest.mark.skipif(
    not os.path.isdir(os.path.join(ACCEPT_OUT, "hbar0p01")),
    reason="criterion-7 outputs not staged (run the simulator acceptance suite first)",
)


def _traj_grids():
    base = os.path.join(ACCEPT_OUT, "hbar0p01")
    return sorted(
        os.path.join(base, f) for f in os.listdir(base) if f.startswith("wigner_traj") and f.endswith(".json")
    )


def test_four_trajectory_contour_panels(tmp_path):
    grids = _traj_grids()[:4]
    assert len(grids) == 4
    out = str(tmp_path / "trajectories.svg")
    render(FigureSpec(inputs=tuple(grids), kind="wigner_contour", output=out))
    assert os.path.getsize(out) > 1000


def test_localization_curve_panels(tmp_path):
    csvs = (
        os.path.join(ACCEPT_OUT, "hbar0p01", "timeseries.csv"),
        os.path.join(ACCEPT_OUT, "hbar0p005", "timeseries.csv"),
    )
    out = str(tmp_path / "localization.svg")
    render(FigureSpec(inputs=csvs, kind="localization_curves", output=out))
    assert os.path.getsize(out) > 1000


def test_renders_deterministic(tmp_path):
    grids = _traj_grids()[:4]
    a, b = str(tmp_path / "a.svg"), str(tmp_path / "b.svg")
    render(FigureSpec(inputs=tuple(grids), kind="wigner_contour", output=a))
    render(FigureSpec(inputs=tuple(grids), kind="wigner_contour", output=b))
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()
