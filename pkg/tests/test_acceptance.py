"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines, or
``python tests/test_acceptance.py`` for a plain summary.
"""
import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from orliczlab.cli import run_scenario
from orliczlab.conjugate import ConjugateApprox, fenchel_young_gap
from orliczlab.graph import MollifiedSelection, Selection, identity_graph, sign_jump_graph
from orliczlab.modular import SpaceTimeGrid
from orliczlab.mollify import modular_continuity_constant
from orliczlab.nfunc import (SpatialDomain, anisotropic_paper, check_condition_M, check_delta2, condition_m_pairs,
                             exponential, power, variable_exponent)

pytestmark = pytest.mark.slow

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
RESULTS = {}


class Runs:
    """Scenario runs shared between criteria; each scenario runs once per output slot."""

    def __init__(self, root):
        self.root = Path(root)
        self.cache = {}

    def get(self, name, slot="a"):
        key = (name, slot)
        if key not in self.cache:
            out = self.root / f"{name}_{slot}"
            t0 = time.perf_counter()
            man = run_scenario(SCENARIOS / f"{name}.json", out=str(out))
            self.cache[key] = (man, out, time.perf_counter() - t0)
        return self.cache[key]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


def report(num, title, ok, detail, capsys=None):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {title}: {detail}"
    RESULTS[num] = line
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    return ok


# ---------------------------------------------------------------------------


def check_fenchel_young():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    line = SpatialDomain((np.pi,))
    square = SpatialDomain((1.0, 1.0))
    cases = {
        "power(2)": power(line, 2),
        "power(3)": power(line, 3),
        "variable_exponent(2+sin x)": variable_exponent(line, "2 + sin(x1)"),
        "anisotropic_paper(2,2)": anisotropic_paper(square, 2.0, 2.0),
    }
    worst = {}
    for name, nf in cases.items():
        d = nf.dim
        n = 10_000
        x = rng.uniform(size=(n, d)) * np.asarray(nf.domain.lengths)
        a = rng.uniform(-3, 3, size=(n, d))
        b = rng.uniform(-3, 3, size=(n, d))
        worst[name] = float(np.min(fenchel_young_gap(nf, ConjugateApprox(nf), x, a, b)))
    dt = time.perf_counter() - t0
    ok = min(worst.values()) >= -1e-6 and dt < 30
    detail = ", ".join(f"{k} min gap {v:.2e}" for k, v in worst.items()) + f"; {dt:.1f} s"
    return ok, detail


def check_conjugate_oracle():
    t0 = time.perf_counter()
    line = SpatialDomain((1.0,))
    errs = {}
    b = np.random.default_rng(1).uniform(-5, 5, size=(1000, 1))
    for p in (2, 3, 4):
        cj = ConjugateApprox(power(line, p, 1.0 / p))
        q = p / (p - 1)
        exact = np.abs(b[:, 0]) ** q / q
        errs[p] = float(np.max(np.abs(cj(np.array([0.5]), b) - exact) / exact))
    nf = anisotropic_paper(SpatialDomain((1.0, 1.0)), 2.0, 2.0)
    u = np.linspace(-1.5, 1.5, 32)
    a = np.stack(np.meshgrid(u, u, indexing="ij"), -1).reshape(-1, 2)
    x = np.array([0.5, 0.5])
    m = nf(x, a)
    bi_err = float(np.max(np.abs(ConjugateApprox(nf).biconjugate(x, a) - m) / m))
    dt = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-5 and bi_err <= 1e-3 and dt < 60
    detail = (", ".join(f"p={p} rel {e:.1e}" for p, e in errs.items())
              + f"; biconjugate rel {bi_err:.1e} on 32x32; {dt:.1f} s")
    return ok, detail


def check_delta2_classifier():
    line = SpatialDomain((1.0,))
    radii = 2.0 ** np.arange(11)
    xs = line.grid_points(9)
    wrong = []
    cs = {}
    for p in (2, 3, 4):
        rep = check_delta2(power(line, p), radii, xs)
        cs[p] = rep.c
        if not (rep.passed and abs(rep.c / 2 ** p - 1) <= 0.05):
            wrong.append(f"power({p})")
    if check_delta2(exponential(line, 1.0), radii, xs).passed:
        wrong.append("exponential(1)")
    detail = ", ".join(f"c[{p}]={c:.4g}" for p, c in cs.items()) + f"; misclassified {wrong or 'none'}"
    return not wrong, detail


def check_condition_m_classifier():
    line = SpatialDomain((1.0,))
    pairs = condition_m_pairs(line, seed=0)
    cases = [("constant p=3", variable_exponent(line, 3.0), True),
             ("Lipschitz p=2+x", variable_exponent(line, "2 + x1"), True),
             ("step p=2+H(x-1/2)", variable_exponent(line, "2 + step(x1 - 0.5)"), False)]
    wrong = [name for name, nf, expect in cases if check_condition_M(nf, 4.0, pairs).passed != expect]
    return not wrong, f"{len(pairs[0])} pairs, H=4; misclassified {wrong or 'none'}"


def check_modular_continuity():
    dom = SpatialDomain((1.0,))
    g = SpaceTimeGrid(dom, 1.0, 2, (256,))
    fields = [g.vector(lambda t, x, f=f: f(x) * (1 + 0 * t[..., None]))
              for f in (lambda x: np.sin(np.pi * x), lambda x: np.cos(3 * x) + 0.5, lambda x: 4 * x * (1 - x))]
    R = dom.star_radius
    deltas = [0.2 * R, 0.1 * R, 0.05 * R]
    ok = True
    parts = []
    for name, nf in (("|a|^2", power(dom, 2)), ("|a|^(2+x/2)", variable_exponent(dom, "2 + x1/2"))):
        tab = modular_continuity_constant(nf, fields, deltas)
        cap = 2 ** dom.dim * tab.c[0] * 1.5
        ok &= tab.spread < 2.0 and bool(np.all(tab.c <= cap))
        parts.append(f"{name} c={np.round(tab.c, 3).tolist()} spread {tab.spread:.2f}")
    return ok, "; ".join(parts)


def check_density(runs):
    man, out, secs = runs.get("density_sine")
    rows = np.loadtxt(out / "density.csv", delimiter=",", skiprows=1, ndmin=2)
    errs = rows[:, 3]
    ok = man.exit_code == 0 and bool(np.all(np.diff(errs) < 0)) and errs[-1] < 1e-2 and secs < 120
    return ok, f"errors {[float(f'{e:.3g}') for e in errs]}; {secs:.1f} s"


def check_linear_heat(runs):
    man, out, secs = runs.get("linear_heat")
    data = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    t, c1 = data[:, 0], data[:, 1]
    dev = float(np.max(np.abs(c1 - np.exp(-t) * c1[0])))
    with open(out / "weak_residual.csv", newline="") as fh:
        wmax = max(abs(float(row["residual"])) for row in csv.DictReader(fh))
    ok = dev <= 2e-3 and wmax <= 1e-3 and secs < 120
    return ok, f"max |c1 - e^-t c1(0)| = {dev:.2e}, max weak residual {wmax:.1e}; {secs:.1f} s"


def check_energy(runs):
    _, heat, _ = runs.get("linear_heat")
    _, ref, _ = runs.get("sign_jump_refinement")
    margins = np.loadtxt(heat / "energy.csv", delimiter=",", skiprows=1)[:, 6]
    rows = json.loads((ref / "refinement.json").read_text())["rows"]
    run_margins = [r["min_energy_margin"] for r in rows]
    ratios = [r["energy_ratio"] for r in rows]
    worst = min(float(margins.min()), *run_margins)
    spread = max(ratios) / min(ratios) - 1
    ok = worst >= -1e-8 and spread <= 0.10
    return ok, f"worst step margin {worst:.2e}; ratios {[round(r, 4) for r in ratios]} spread {spread:.1%}"


def check_sign_jump(runs):
    man, ref, secs = runs.get("sign_jump_refinement")
    doc = json.loads((ref / "refinement.json").read_text())
    ratios = doc["axis_ratios"].get("eps", [])
    diffs = doc["axis_differences"].get("eps", [])
    incl = [(r["eps"], r["min_inclusion_margin"]) for r in doc["rows"]]
    ok = (bool(ratios) and max(ratios) <= 0.7 and all(np.diff(diffs) < 0)
          and all(m >= -5 * e for e, m in incl) and secs < 600)
    detail = (f"eps differences {[float(f'{d:.3g}') for d in diffs]} ratio {[round(r, 3) for r in ratios]}; "
              f"inclusion {[(e, float(f'{m:.3g}')) for e, m in incl]}; {secs:.1f} s")
    return ok, detail


def check_mollified_selection():
    x1 = np.array([0.5])
    xi = np.random.default_rng(2).uniform(-4, 4, size=(10_000, 1))
    exact = 0.0
    for d in (1, 2):
        ms = MollifiedSelection(Selection(identity_graph(d)), 0.1)
        pts = np.random.default_rng(d).uniform(-4, 4, size=(2000, d))
        exact = max(exact, float(np.max(np.abs(ms(0.0, np.full(d, 0.5), pts) - pts))))
    margins = {}
    for route in ("direct", "inverse"):
        ms = MollifiedSelection(Selection(sign_jump_graph(1), inverse=route == "inverse"), 0.1, route=route)
        other = np.random.default_rng(3).uniform(-4, 4, size=xi.shape)
        margins[route] = float(np.min((ms(0.0, x1, xi) - ms(0.0, x1, other))[:, 0] * (xi - other)[:, 0]))
    eps = 0.1
    inv = MollifiedSelection(Selection(identity_graph(1), inverse=True), eps, route="inverse")
    inv_err = float(np.max(np.abs(inv(0.0, x1, xi) - xi / (1 + eps))))
    ok = exact <= 1e-8 and min(margins.values()) >= -1e-10 and inv_err <= 1e-8
    detail = (f"identity error {exact:.1e}; min margins direct {margins['direct']:.1e} "
              f"inverse {margins['inverse']:.1e}; inverse identity error {inv_err:.1e}")
    return ok, detail


def check_determinism(runs):
    names = ["quadratic_checks", "conjugate_power3", "density_sine", "sign_jump_graph", "linear_heat",
             "sign_jump_refinement"]
    compared, diff = 0, []
    for name in names:
        _, a, _ = runs.get(name, "a")
        _, b, _ = runs.get(name, "b")
        for f in sorted(p.name for p in a.glob("*.csv")):
            compared += 1
            if (a / f).read_bytes() != (b / f).read_bytes():
                diff.append(f"{name}/{f}")
    return compared > 0 and not diff, f"{compared} CSV files compared across reruns; differing {diff or 'none'}"


# ---------------------------------------------------------------------------


def test_fenchel_young_suite(capsys):
    assert report(1, "Fenchel-Young suite", *check_fenchel_young(), capsys)


def test_conjugate_oracle(capsys):
    assert report(2, "conjugate oracle", *check_conjugate_oracle(), capsys)


def test_delta2_classifier(capsys):
    assert report(3, "doubling classifier", *check_delta2_classifier(), capsys)


def test_condition_m_classifier(capsys):
    assert report(4, "log-Holder classifier", *check_condition_m_classifier(), capsys)


def test_modular_continuity(capsys):
    assert report(5, "modular continuity", *check_modular_continuity(), capsys)


def test_density_experiment(runs, capsys):
    assert report(6, "density experiment", *check_density(runs), capsys)


def test_linear_heat_oracle(runs, capsys):
    assert report(7, "linear heat oracle", *check_linear_heat(runs), capsys)


def test_energy_inequality(runs, capsys):
    assert report(8, "energy inequality", *check_energy(runs), capsys)


def test_sign_jump_refinement_and_minty(runs, capsys):
    assert report(9, "sign-jump refinement and Minty", *check_sign_jump(runs), capsys)


def test_mollified_selection_properties(capsys):
    assert report(10, "mollified selection", *check_mollified_selection(), capsys)


def test_determinism(runs, capsys):
    assert report(11, "determinism", *check_determinism(runs), capsys)


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        shared = Runs(tmp)
        checks = [(1, "Fenchel-Young suite", check_fenchel_young), (2, "conjugate oracle", check_conjugate_oracle),
                  (3, "doubling classifier", check_delta2_classifier),
                  (4, "log-Holder classifier", check_condition_m_classifier),
                  (5, "modular continuity", check_modular_continuity),
                  (6, "density experiment", lambda: check_density(shared)),
                  (7, "linear heat oracle", lambda: check_linear_heat(shared)),
                  (8, "energy inequality", lambda: check_energy(shared)),
                  (9, "sign-jump refinement and Minty", lambda: check_sign_jump(shared)),
                  (10, "mollified selection", check_mollified_selection),
                  (11, "determinism", lambda: check_determinism(shared))]
        passed = sum(bool(report(n, title, *fn())) for n, title, fn in checks)
        print(f"{passed}/{len(checks)} criteria passed")
