import itertools
import math
import random
from dataclasses import dataclass

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sequential_ss
from webgrid.reference import REFERENCE_TABLES, TABLE_1
from webgrid.stats import (
    EFFECTS,
    UnbalancedDesign,
    f_pvalue,
    fit_anova3,
    format_p,
    format_table,
    recompute_f,
    reg_inc_beta,
    table_from_sums,
)


@dataclass
class Obs:
    x1: int
    x2: int
    x3: int
    replicate: int
    t: float
    m: float = 0.0


def design(y: np.ndarray) -> list[Obs]:
    a, b, c, r = y.shape
    return [
        Obs(i, j, k, rep + 1, float(y[i, j, k, rep]))
        for i, j, k, rep in itertools.product(range(a), range(b), range(c), range(r))
    ]


def exact_betainc(x, a, b):
    return float(mpmath.betainc(a, b, 0, x, regularized=True))


# -- regularized incomplete beta ----------------------------------------------

def test_reg_inc_beta_endpoints_and_symmetry():
    assert reg_inc_beta(1.0, 2.5, 3.0) == 1.0
    assert reg_inc_beta(0.0, 2.5, 3.0) == 0.0
    for a in (0.5, 1, 3.3, 40, 376):
        assert reg_inc_beta(0.5, a, a) == pytest.approx(0.5, abs=1e-12)
    for x in (0.0, 0.1, 0.37, 0.99):
        assert reg_inc_beta(x, 1, 1) == pytest.approx(x, abs=1e-14)


@settings(max_examples=300, deadline=None)
@given(
    x=st.floats(0.0, 1.0),
    a=st.floats(0.05, 500.0),
    b=st.floats(0.05, 500.0),
)
def test_reg_inc_beta_matches_arbitrary_precision(x, a, b):
    assert abs(reg_inc_beta(x, a, b) - exact_betainc(x, a, b)) <= 1e-12


@pytest.mark.parametrize("x,a,b", [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -2)])
def test_reg_inc_beta_domain(x, a, b):
    with pytest.raises(ValueError):
        reg_inc_beta(x, a, b)


# -- F tail probability -----------------------------------------------------------

def test_f_pvalue_spot_values():
    assert f_pvalue(1.0, 1, 1) == pytest.approx(0.5, abs=1e-9)
    assert f_pvalue(2.72, 2, 752) == pytest.approx(0.066, abs=0.005)
    assert f_pvalue(9.36, 4, 752) < 0.001
    assert f_pvalue(0.0, 3, 10) == 1.0


@settings(max_examples=200, deadline=None)
@given(f=st.floats(0.0, 1e4), d1=st.integers(1, 200), d2=st.integers(1, 1000))
def test_f_pvalue_matches_arbitrary_precision(f, d1, d2):
    x = d2 / (d2 + d1 * f)
    expected = float(mpmath.betainc(d2 / 2, d1 / 2, 0, x, regularized=True))
    assert abs(f_pvalue(f, d1, d2) - expected) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(f=st.floats(0.01, 50.0), step=st.floats(0.01, 5.0), d1=st.integers(1, 80), d2=st.integers(5, 800))
def test_f_pvalue_decreasing_in_f(f, step, d1, d2):
    hi, lo = f_pvalue(f, d1, d2), f_pvalue(f + step, d1, d2)
    assert lo <= hi
    if hi > 1e-12 and lo < 1 - 1e-12:
        assert lo < hi


@pytest.mark.parametrize("f", [math.inf, math.nan, -1.0])
def test_f_pvalue_rejects_bad_f(f):
    with pytest.raises(ValueError):
        f_pvalue(f, 2, 10)


# -- ANOVA -----------------------------------------------------------------------

def test_df_column_for_full_design():
    rng = np.random.default_rng(7)
    table = fit_anova3(design(rng.normal(size=(3, 21, 3, 5))))
    assert table.df_column() == [4, 2, 20, 2, 40, 4, 40, 80, 752]


def test_constant_response_has_no_variance():
    table = fit_anova3(design(np.full((2, 3, 2, 3), 0.1)))
    for row in table.rows:
        assert row.sum_sq == 0.0
    for name in EFFECTS:
        assert table[name].f_value == 0.0
        assert table[name].p_value == 1.0


def test_random_2x2x2_matches_projection_oracle():
    rng = np.random.default_rng(11)
    y = rng.normal(size=(2, 2, 2, 2)) * 3 + 10
    table = fit_anova3(design(y))
    oracle = sequential_ss(y)
    for name, ss in oracle.items():
        assert table[name].sum_sq == pytest.approx(ss, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("shape", [(3, 2, 2, 2), (2, 3, 3, 3), (3, 3, 3, 2), (2, 2, 3, 3)])
def test_projection_oracle_shapes(shape):
    rng = np.random.default_rng(sum(shape))
    y = rng.exponential(size=shape)
    table = fit_anova3(design(y))
    for name, ss in sequential_ss(y).items():
        assert table[name].sum_sq == pytest.approx(ss, rel=1e-9, abs=1e-12)


def test_sum_of_squares_decomposes():
    rng = np.random.default_rng(3)
    y = rng.gamma(2.0, size=(3, 4, 2, 3))
    table = fit_anova3(design(y))
    total = float(np.sum((y - y.mean()) ** 2))
    assert sum(r.sum_sq for r in table.rows) == pytest.approx(total, rel=1e-6)
    assert sum(r.df for r in table.rows) == y.size - 1


def test_shuffled_observations_give_same_table():
    rng = np.random.default_rng(5)
    obs = design(rng.normal(size=(2, 3, 2, 2)))
    base = fit_anova3(obs)
    random.Random(1).shuffle(obs)
    again = fit_anova3(obs)
    assert [r.sum_sq for r in again.rows] == pytest.approx([r.sum_sq for r in base.rows], rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_scale_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(2, 3, 2, 2))
    base, scaled = fit_anova3(design(y)), fit_anova3(design(c * y))
    for r0, r1 in zip(base.rows, scaled.rows):
        assert r1.df == r0.df
        assert r1.sum_sq == pytest.approx(c * c * r0.sum_sq, rel=1e-9, abs=1e-300)
        if r0.f_value is not None:
            assert r1.f_value == pytest.approx(r0.f_value, rel=1e-9)
            assert r1.stars == r0.stars


def test_missing_cell_is_named():
    rng = np.random.default_rng(0)
    obs = design(rng.normal(size=(2, 2, 2, 2)))
    obs = [o for o in obs if not (o.x1 == 1 and o.x2 == 0 and o.x3 == 1 and o.replicate == 2)]
    with pytest.raises(UnbalancedDesign, match="x1': 1.*x2': 0.*x3': 1.*replicate': 2"):
        fit_anova3(obs)


def test_duplicate_cell_rejected():
    obs = design(np.zeros((2, 2, 2, 2)))
    obs.append(obs[0])
    with pytest.raises(UnbalancedDesign, match="duplicate"):
        fit_anova3(obs)


def test_single_replicate_rejected():
    with pytest.raises(UnbalancedDesign):
        fit_anova3(design(np.zeros((2, 2, 2, 1))))


def test_m_response_selected():
    rng = np.random.default_rng(2)
    obs = design(rng.normal(size=(2, 2, 2, 2)))
    for o in obs:
        o.m = 2 * o.t
    t_table, m_table = fit_anova3(obs, "t"), fit_anova3(obs, "m")
    assert m_table["x1"].sum_sq == pytest.approx(4 * t_table["x1"].sum_sq)


def test_decision_trail():
    rng = np.random.default_rng(9)
    y = rng.normal(scale=0.1, size=(2, 3, 2, 3))
    y[1, :, :, :] += 5  # pure x1 main effect
    assert fit_anova3(design(y)).decision() == "x1"


# -- reference tables ---------------------------------------------------------------

def test_recompute_f_table1():
    f = recompute_f(TABLE_1.ss_df(), TABLE_1.residual_ss_df())
    assert f["x1"] == pytest.approx(247.94, abs=0.01)
    assert f["x1:x2"] == pytest.approx(38.05, abs=0.01)


@pytest.mark.parametrize("key", sorted(REFERENCE_TABLES))
def test_recompute_f_all_tables(key):
    ref = REFERENCE_TABLES[key]
    f = recompute_f(ref.ss_df(), ref.residual_ss_df())
    for name, printed in ref.printed_f().items():
        assert abs(f[name] - printed) <= 0.01, name


def test_recompute_f_edge_cases():
    assert recompute_f({"a": (0.0, 2)}, (10.0, 5)) == {"a": 0.0}
    with pytest.raises(ZeroDivisionError):
        recompute_f({"a": (1.0, 2)}, (0.0, 5))


# -- formatting ---------------------------------------------------------------------

@pytest.mark.parametrize("p,text", [
    (0.0004, "0***"),
    (0.07, "0.07"),
    (0.03, "0.03*"),
    (0.0025, "0**"),
    (1.0, "1.00"),
    (0.98, "0.98"),
])
def test_format_p(p, text):
    assert format_p(p) == text


def test_format_table_layout():
    table = table_from_sums(TABLE_1.ss_df(), TABLE_1.residual_ss_df(), "t")
    text = format_table(table, "Table for t, simple jobs")
    lines = text.splitlines()
    assert lines[0] == "Table for t, simple jobs"
    assert lines[2].split() == ["Variation", "Df", "Sum", "Sq", "Mean", "Sq", "F", "value", "Pr(>F)"]
    body = [ln for ln in lines if ln and ln[0] in "Rx"]
    assert [ln.split()[0] for ln in body] == ["R", "x1", "x2", "x3", "x1", "x1", "x2", "x1", "Residual"]
    x1_line = next(ln for ln in body if ln.split()[0] == "x1")
    assert x1_line.split() == ["x1", "2", "18025700.16", "9012850.08", "247.94", "0***"]
    x3_line = next(ln for ln in body if ln.split()[0] == "x3")
    assert x3_line.split()[-2:] == ["2.72", "0.07"]
    residual = body[-1].split()
    assert residual == ["Residual", "752", "27335456.63", "36350.34"]
