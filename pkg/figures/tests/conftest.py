"""Fixture CSVs matching the documented export schemas."""

import numpy as np
import pytest


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    return str(path)


@pytest.fixture
def eps_bars_csv(tmp_path):
    """3 epsilons x 3 mechanisms (targeted/attacked) plus a non-private row."""
    rows = []
    for mech, base in (("mb", 0.50), ("pm", 0.55), ("sw", 0.45)):
        for step, eps in enumerate((0.01, 0.1, 1.0)):
            mean = base + 0.05 * step
            rows.append((mech, eps, "targeted", "attacked",
                         mean, mean - 0.02, mean + 0.02))
    rows.append(("none", "inf", "targeted", "clean", 0.9, 0.88, 0.92))
    return write_csv(tmp_path / "eps_bars.csv",
                     "mechanism,epsilon,scope,phase,mean,ci_low,ci_high", rows)


@pytest.fixture
def eta_lines_csv(tmp_path):
    rows = []
    for which, etas in (("eta1", (0.03, 0.09, 0.15)), ("eta2", (0.5, 0.8))):
        for eta in etas:
            for scope, clean in (("targeted", 0.6), ("untargeted", 0.65)):
                attacked = clean - 0.3 * eta
                rows.append((which, eta, scope, clean, attacked,
                             (clean - attacked) / clean))
    return write_csv(tmp_path / "eta_lines.csv",
                     "which,eta,scope,clean_mean,attacked_mean,impact_ratio",
                     rows)


@pytest.fixture
def k_lines_csv(tmp_path):
    rows = []
    for k, acc in ((0, 0.54), (2, 0.61), (4, 0.65), (8, 0.68), (16, 0.62)):
        for phase, offset in (("clean", 0.0), ("attacked", -0.08)):
            mean = acc + offset
            rows.append((k, phase, "targeted", mean, mean - 0.03, mean + 0.03))
    return write_csv(tmp_path / "k_lines.csv",
                     "k,phase,scope,mean,ci_low,ci_high", rows)


@pytest.fixture
def homophily_csv(tmp_path):
    """Two normalized 40-bin histograms over [-1, 1]."""
    edges = np.linspace(-1.0, 1.0, 41)
    rows = []
    for phase, center in (("pre", 0.3), ("post", 0.25)):
        mids = (edges[:-1] + edges[1:]) / 2.0
        weights = np.exp(-((mids - center) ** 2) / 0.08)
        mass = weights / weights.sum()
        for lo, hi, m in zip(edges[:-1], edges[1:], mass):
            rows.append((f"{lo:.17g}", f"{hi:.17g}", f"{m:.17g}", phase))
    return write_csv(tmp_path / "homophily_hist.csv",
                     "bin_low,bin_high,mass,phase", rows)


@pytest.fixture
def theory_curve_csv(tmp_path):
    rows = [(0.01, 6.5e8, 2.1e7, 100, 0),
            (0.1, 6.6e6, 2.3e5, 100, 0),
            (1.0, 6.8e4, 3.0e3, 100, 0)]
    return write_csv(tmp_path / "theory_curve.csv",
                     "epsilon,mean_delta_psi,stderr,trials,seed", rows)
