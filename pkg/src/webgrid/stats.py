"""Balanced three-factor ANOVA with a replicate block.

The model has main effects for the replicate block ``R`` and the factors
``x1``, ``x2``, ``x3``, all two- and three-way interactions among the factors,
and a residual. Under a balanced complete design the effect sums of squares
are orthogonal, so they are computed from cell-mean contrasts and do not
depend on term order.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

FACTORS = ("x1", "x2", "x3")
EFFECTS = ("R", "x1", "x2", "x3", "x1:x2", "x1:x3", "x2:x3", "x1:x2:x3")
RESIDUAL = "Residual"
ROW_ORDER = EFFECTS + (RESIDUAL,)

_EFFECT_AXES = {
    "x1": (0,),
    "x2": (1,),
    "x3": (2,),
    "x1:x2": (0, 1),
    "x1:x3": (0, 2),
    "x2:x3": (1, 2),
    "x1:x2:x3": (0, 1, 2),
}

_MAX_ITER = 10_000
_EPS = 1e-16
_TINY = 1e-300


class UnbalancedDesign(ValueError):
    pass


# -- special functions -----------------------------------------------------

def _betacf(x: float, a: float, b: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


def f_pvalue(f: float, df1: float, df2: float) -> float:
    """Upper-tail probability P(F > f) of the F(df1, df2) distribution."""
    if not math.isfinite(f):
        raise ValueError(f"F statistic must be finite, got {f}")
    if f < 0:
        raise ValueError(f"F statistic must be >= 0, got {f}")
    if df1 < 1 or df2 < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got ({df1}, {df2})")
    if f == 0:
        return 1.0
    x = df2 / (df2 + df1 * f)
    return min(1.0, max(0.0, reg_inc_beta(x, df2 / 2.0, df1 / 2.0)))


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


# -- tables ----------------------------------------------------------------

@dataclass
class AnovaRow:
    name: str
    df: int
    sum_sq: float
    mean_sq: float
    f_value: Optional[float] = None
    p_value: Optional[float] = None

    @property
    def stars(self) -> str:
        return "" if self.p_value is None else stars(self.p_value)


@dataclass
class AnovaTable:
    response: str
    rows: list[AnovaRow]
    total_ss: float
    n_obs: int
    levels: dict[str, int] = field(default_factory=dict)
    caption: str = ""

    def __getitem__(self, name: str) -> AnovaRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    @property
    def residual(self) -> AnovaRow:
        return self[RESIDUAL]

    def df_column(self) -> list[int]:
        return [row.df for row in self.rows]

    def decision(self, alpha: float = 0.05) -> str:
        """Highest-order factor interaction significant at ``alpha``."""
        ladder = [("x1:x2:x3",), ("x1:x2", "x1:x3", "x2:x3"), ("x1", "x2", "x3")]
        for tier in ladder:
            hits = [name for name in tier if (self[name].p_value or 1.0) < alpha]
            if hits:
                return ", ".join(hits)
        return "none"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# webgrid anova v1 response={self.response}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["term", "df", "sum_sq", "mean_sq", "f_value", "p_value", "stars"])
        for row in self.rows:
            writer.writerow([
                row.name,
                row.df,
                repr(row.sum_sq),
                repr(row.mean_sq),
                "" if row.f_value is None else repr(row.f_value),
                "" if row.p_value is None else repr(row.p_value),
                row.stars,
            ])
        return buf.getvalue()


def _finish_rows(effects: Sequence[tuple[str, int, float]], res_df: int, res_ss: float) -> list[AnovaRow]:
    res_ms = res_ss / res_df if res_df > 0 else 0.0
    rows = []
    for name, df, ss in effects:
        ms = ss / df if df > 0 else 0.0
        if ss == 0.0:
            f, p = 0.0, 1.0
        elif res_ms > 0:
            f = ms / res_ms
            p = f_pvalue(f, df, res_df) if df > 0 else 1.0
        else:
            f, p = math.inf, 0.0
        rows.append(AnovaRow(name, df, ss, ms, f, p))
    rows.append(AnovaRow(RESIDUAL, res_df, res_ss, res_ms))
    return rows


def _cell_array(
    observations: Iterable, response: str
) -> tuple[np.ndarray, dict[str, list]]:
    obs = list(observations)
    if not obs:
        raise UnbalancedDesign("no observations")
    keys = ("x1", "x2", "x3", "replicate")
    levels = {k: sorted({getattr(o, k) for o in obs}) for k in keys}
    index = {k: {v: i for i, v in enumerate(levels[k])} for k in keys}
    shape = tuple(len(levels[k]) for k in keys)
    y = np.full(shape, np.nan)
    for o in obs:
        cell = tuple(index[k][getattr(o, k)] for k in keys)
        if not np.isnan(y[cell]):
            raise UnbalancedDesign(f"duplicate observation for cell {tuple(getattr(o, k) for k in keys)}")
        y[cell] = float(getattr(o, response))
    if np.isnan(y).any():
        missing = tuple(int(i) for i in np.argwhere(np.isnan(y))[0])
        named = dict(zip(keys, (levels[k][i] for k, i in zip(keys, missing))))
        raise UnbalancedDesign(f"missing cell {named}; the design must be complete and balanced")
    return y, levels


def _interaction(cell_means: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Effect contrast for the factor set ``axes`` by inclusion-exclusion of marginal means."""
    out = np.zeros(cell_means.shape)
    for k in range(len(axes) + 1):
        for keep in itertools.combinations(axes, k):
            drop = tuple(a for a in range(cell_means.ndim) if a not in keep)
            marginal = cell_means.mean(axis=drop, keepdims=True) if drop else cell_means
            out = out + (-1) ** (len(axes) - k) * marginal
    return out


def fit_anova3(observations: Iterable, response: str = "t", caption: str = "") -> AnovaTable:
    """Fit the replicated three-factor model to ``observations``.

    Each observation needs attributes ``x1``, ``x2``, ``x3``, ``replicate``
    and the response (``t`` or ``m``). Every combination must appear exactly
    once.
    """
    y, levels = _cell_array(observations, response)
    a, b, c, r = y.shape
    if r < 2:
        raise UnbalancedDesign("at least two replicates are needed")
    n = y.size
    grand = y.mean()
    dev = y - grand
    total_ss = float(np.sum(dev * dev))

    cell_means = y.mean(axis=3)
    fitted = np.full(y.shape, grand)
    effects = []

    rep_eff = y.mean(axis=(0, 1, 2)) - grand
    fitted = fitted + rep_eff[None, None, None, :]
    effects.append(("R", r - 1, float(a * b * c * np.sum(rep_eff ** 2))))

    dims = {0: a, 1: b, 2: c}
    for name in EFFECTS[1:]:
        axes = _EFFECT_AXES[name]
        eff = _interaction(cell_means, axes)
        df = math.prod(dims[ax] - 1 for ax in axes)
        ss = float(r * np.sum(eff ** 2))
        fitted = fitted + eff[..., None]
        effects.append((name, df, ss))

    resid = y - fitted
    res_ss = float(np.sum(resid * resid))
    res_df = n - 1 - sum(df for _, df, _ in effects)

    # round-off on (near) constant responses must not masquerade as signal
    scale = float(np.max(np.abs(y))) if n else 0.0
    zero_tol = n * (64 * np.finfo(float).eps * scale) ** 2
    effects = [(nm, df, 0.0 if ss <= zero_tol else ss) for nm, df, ss in effects]
    if res_ss <= zero_tol:
        res_ss = 0.0
    if total_ss <= zero_tol:
        total_ss = 0.0

    rows = _finish_rows(effects, res_df, res_ss)
    counts = {"x1": a, "x2": b, "x3": c, "R": r}
    return AnovaTable(response, rows, total_ss, n, counts, caption)


def recompute_f(table: Mapping[str, tuple[float, int]], residual: tuple[float, int]) -> dict[str, float]:
    """F values from externally supplied ``name -> (sum_sq, df)`` and residual ``(sum_sq, df)``."""
    res_ss, res_df = residual
    if res_ss == 0:
        raise ZeroDivisionError("residual sum of squares is zero; F is undefined")
    res_ms = res_ss / res_df
    return {name: (ss / df) / res_ms for name, (ss, df) in table.items()}


def table_from_sums(
    entries: Mapping[str, tuple[float, int]], residual: tuple[float, int], response: str, caption: str = ""
) -> AnovaTable:
    """Rebuild a full table (F, p, stars) from given sums of squares and dfs."""
    effects = [(name, df, float(ss)) for name, (ss, df) in entries.items()]
    rows = _finish_rows(effects, residual[1], float(residual[0]))
    total = sum(ss for _, _, ss in effects) + residual[0]
    n_obs = sum(df for _, df, _ in effects) + residual[1] + 1
    return AnovaTable(response, rows, total, n_obs, caption=caption)


# -- text rendering ----------------------------------------------------------

def _label(name: str) -> str:
    return " x ".join(name.split(":"))


def format_p(p: float) -> str:
    text = f"{p:.2f}"
    if text == "0.00":
        text = "0"
    return text + stars(p)


def format_table(table: AnovaTable, caption: Optional[str] = None) -> str:
    caption = table.caption if caption is None else caption
    header = ("Variation", "Df", "Sum Sq", "Mean Sq", "F value", "Pr(>F)")
    body = []
    for row in table.rows:
        cells = [_label(row.name), str(row.df), f"{row.sum_sq:.2f}", f"{row.mean_sq:.2f}"]
        if row.f_value is None:
            cells += ["", ""]
        else:
            cells += [f"{row.f_value:.2f}", format_p(row.p_value)]
        body.append(cells)
    widths = [max(len(r[i]) for r in body + [list(header)]) for i in range(len(header))]

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join([first] + rest).rstrip()

    rule = "=" * len(line(list(header)))
    out = []
    if caption:
        out.append(caption)
    out += [rule, line(list(header)), "-" * len(rule)]
    out += [line(cells) for cells in body[:-1]]
    out += ["-" * len(rule), line(body[-1]), rule]
    out.append("Signif. codes: *** p < 0.001, ** p < 0.01, * p < 0.05")
    return "\n".join(out) + "\n"
