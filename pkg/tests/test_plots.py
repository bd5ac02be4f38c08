import numpy as np

from fluxobs.plots import FIGURES, entry_prefixes, render_figures
from fluxobs.report import column_registry


def test_entry_prefixes():
    cols = {"drem[1e+15].x3_hat": 0, "drem[1e+15].x4_hat": 0, "drem[1e+15]#2.x3_hat": 0,
            "gradient[1].x3_hat": 0, "dremx.y": 0}
    assert entry_prefixes(cols, "drem") == ["drem[1e+15]", "drem[1e+15]#2"]
    assert entry_prefixes(cols, "overparam") == []


def test_render_all_figures(short_traj, tmp_path):
    paths = render_figures(column_registry(short_traj), tmp_path)
    assert sorted(p.stem for p in paths) == sorted(FIGURES)
    for p in paths:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_render_is_deterministic(short_traj, tmp_path):
    cols = column_registry(short_traj)
    a = render_figures(cols, tmp_path / "a")
    b = render_figures(cols, tmp_path / "b")
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def test_missing_columns_skip_figures(tmp_path):
    cols = {"t": np.linspace(0, 1, 5), "Delta": np.zeros(5)}
    paths = render_figures(cols, tmp_path)
    assert [p.stem for p in paths] == ["excitation"]
    assert render_figures({"t": np.zeros(2)}, tmp_path / "none") == []
