"""Reference ANOVA tables used as regression fixtures.

Each table maps a term to ``(df, sum_sq, mean_sq, f_value, pr)`` exactly as
printed; ``pr`` keeps the printed string including stars. The bottom row,
printed as "Total", carries the residual df and sums of squares
(945 - 1 - 192 = 752).
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ReferenceTable:
    key: str
    response: str
    job_kind: str
    rows: dict  # term -> (df, sum_sq, mean_sq, f_value, pr)
    residual: tuple  # (df, sum_sq, mean_sq)

    def ss_df(self) -> dict[str, tuple[float, int]]:
        return {name: (ss, df) for name, (df, ss, _, _, _) in self.rows.items()}

    def residual_ss_df(self) -> tuple[float, int]:
        df, ss, _ = self.residual
        return ss, df

    def printed_f(self) -> dict[str, float]:
        return {name: f for name, (_, _, _, f, _) in self.rows.items()}


TABLE_1 = ReferenceTable(
    "table1", "t", "simple",
    {
        "R": (4, 1361074.48, 340268.62, 9.36, "0***"),
        "x1": (2, 18025700.16, 9012850.08, 247.94, "0***"),
        "x2": (20, 1593014626.00, 79650731.28, 2191.20, "0***"),
        "x3": (2, 198097.95, 99048.97, 2.72, "0.07"),
        "x1:x2": (40, 55318920.38, 1382973.01, 38.05, "0***"),
        "x1:x3": (4, 292937.84, 73234.46, 2.01, "0.09"),
        "x2:x3": (40, 877512.22, 21937.81, 0.60, "0.98"),
        "x1:x2:x3": (80, 1354073.65, 16925.92, 0.47, "1.00"),
    },
    (752, 27335456.63, 36350.34),
)

TABLE_2 = ReferenceTable(
    "table2", "t", "complex",
    {
        "R": (4, 135220.15, 33805.04, 0.89, "0.47"),
        "x1": (2, 117315.29, 58657.64, 1.55, "0.21"),
        "x2": (20, 3741202837.51, 187060141.88, 4943.67, "0***"),
        "x3": (2, 183240.52, 91620.26, 2.42, "0.09"),
        "x1:x2": (40, 2214882.24, 55372.06, 1.46, "0.03*"),
        "x1:x3": (4, 540881.64, 135220.41, 3.57, "0.01**"),
        "x2:x3": (40, 2086187.19, 52154.68, 1.38, "0.06"),
        "x1:x2:x3": (80, 6259327.49, 78241.59, 2.07, "0***"),
    },
    (752, 28454423.10, 37838.33),
)

TABLE_3 = ReferenceTable(
    "table3", "m", "simple",
    {
        "R": (4, 123.97, 30.99, 4.15, "0**"),
        "x1": (2, 3162.18, 1581.09, 211.59, "0***"),
        "x2": (20, 12473.87, 623.69, 83.47, "0***"),
        "x3": (2, 132.58, 66.29, 8.87, "0***"),
        "x1:x2": (40, 8466.44, 211.66, 28.33, "0***"),
        "x1:x3": (4, 280.48, 70.12, 9.38, "0***"),
        "x2:x3": (40, 534.04, 13.35, 1.79, "0**"),
        "x1:x2:x3": (80, 1481.83, 18.52, 2.48, "0***"),
    },
    (752, 5619.23, 7.47),
)

TABLE_4 = ReferenceTable(
    "table4", "m", "complex",
    {
        "R": (4, 2784.04, 696.01, 4.01, "0***"),
        "x1": (2, 1347391.25, 673695.62, 3877.80, "0***"),
        "x2": (20, 5021564.55, 251078.23, 1445.21, "0***"),
        "x3": (2, 431.84, 215.92, 1.24, "0.29"),
        "x1:x2": (40, 2156918.31, 53922.96, 310.38, "0***"),
        "x1:x3": (4, 9619.40, 2404.85, 13.84, "0"),
        "x2:x3": (40, 6777.45, 169.44, 0.98, "0.52"),
        "x1:x2:x3": (80, 43924.24, 549.05, 3.16, "0"),
    },
    (752, 130645.96, 173.73),
)

REFERENCE_TABLES = {t.key: t for t in (TABLE_1, TABLE_2, TABLE_3, TABLE_4)}
