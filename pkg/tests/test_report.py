import re
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from hedgedrl import cli
from hedgedrl.errors import DataError
from hedgedrl.report import REQUIRED, annual_weights, bar_chart, format_table, line_chart, render

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("rep")
    cfg = tmp / "cfg.ini"
    cfg.write_text("[data]\nn_days = 1100\nseed = 1\n[trainer]\nmax_iter = 3\npatience = 3\n"
                   "[observation]\nlags = 0, 1, 2\nvol_window = 3\ncontext_lags = 0, 1, 2\n"
                   "[plan]\nfirst_test_year = 2003\nmin_train_years = 3\n[run]\nwindows = 1\n")
    assert cli.main(["run", str(cfg), "--output", str(tmp / "res")]) == 0
    return tmp / "res"


def test_render_writes_parseable_charts(results):
    table, charts = render(results)
    names = {p.name for p in charts}
    assert "performance.svg" in names
    assert {"weights_drl.svg", "weights_markowitz.svg", "weights_winner.svg"} <= names
    root = ET.parse(results / "performance.svg").getroot()
    lines = {el.get("data-name") for el in root.iter(f"{SVG}polyline")}
    assert lines == {"DRL", "DRL no context", "Winner", "Loser", "Markowitz", "Risky asset"}
    bars = list(ET.parse(results / "weights_drl.svg").getroot().iter(f"{SVG}rect"))
    assert sum(b.get("class") == "bar" for b in bars) > 0
    assert "1 Years" in table and "Markowitz" in table


def test_missing_inputs_write_nothing(results, tmp_path):
    for name in REQUIRED:
        part = tmp_path / name.replace(".csv", "")
        part.mkdir()
        for other in REQUIRED:
            if other != name:
                (part / other).write_bytes((results / other).read_bytes())
        with pytest.raises(DataError, match=name):
            render(part)
        assert not list(part.glob("*.svg"))


def test_table_prints_drawdown_as_loss():
    comp = pd.DataFrame({"model": ["A"], "window_years": [3], "return_ann": [0.2245],
                         "sharpe": [1.17], "sortino": [1.5], "max_dd": [0.34]})
    text = format_table(comp)
    assert re.search(r"A\s+22\.45%\s+1\.50\s+1\.17\s+-0\.34", text)
    comp.loc[0, "sharpe"] = np.nan
    assert "n/a" in format_table(comp)


def test_chart_geometry():
    dates = pd.bdate_range("2020-01-01", periods=5)
    svg = line_chart({"x": (dates, [1, 2, 3, 2, 1]), "flat": (dates, [1.0] * 5)}, "t")
    root = ET.fromstring(svg)
    polys = list(root.iter(f"{SVG}polyline"))
    assert len(polys) == 2
    pts = [tuple(map(float, p.split(","))) for p in polys[0].get("points").split()]
    assert pts[0][0] < pts[-1][0] and pts[2][1] == min(p[1] for p in pts)   # peak drawn highest

    w = pd.DataFrame({"date": ["2020-01-02", "2020-06-01", "2021-01-04"] * 2,
                      "model": "M", "strategy": ["a"] * 3 + ["b"] * 3,
                      "weight": [0.2, 0.4, 1.0, 0.8, 0.6, 0.0]})
    yearly = annual_weights(w, "M")
    assert yearly.loc[2020, "a"] == pytest.approx(0.3) and yearly.loc[2021, "b"] == 0.0
    root = ET.fromstring(bar_chart(yearly, "w"))
    assert len([r for r in root.iter(f"{SVG}rect") if r.get("class") == "bar"]) == 4
