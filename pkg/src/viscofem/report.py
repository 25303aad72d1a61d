"""Convergence reports and their CSV representation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .mms import ErrorTriple, convergence_rate

COLUMNS = ("h_or_dt", "energy_err", "vel_l2_err", "disp_l2_err")


def fmt(value: float) -> str:
    """Scientific notation with 5 significant digits, e.g. 2.2557E-03."""
    return f"{value:.4E}"


def quantize(value: float) -> float:
    return float(fmt(value))


@dataclass(frozen=True)
class ConvergenceReport:
    """Errors per refinement level with pairwise and least-squares rates per column.

    Values are held at the 5-digit precision written to CSV so that a
    report survives a CSV round trip unchanged.
    """

    form: str
    degree: int
    mode: str
    fixed: str
    steps: tuple
    errors: tuple
    pairwise: tuple
    least_squares: tuple

    @classmethod
    def build(cls, form: str, degree: int, mode: str, fixed: str, steps, errors) -> "ConvergenceReport":
        pairs = sorted(zip(steps, errors), key=lambda p: -p[0])
        steps_q = tuple(quantize(s) for s, _ in pairs)
        errs_q = tuple(tuple(quantize(v) for v in (e.as_tuple() if isinstance(e, ErrorTriple) else e))
                       for _, e in pairs)
        pairwise, lsq = [], []
        for col in range(3):
            r = convergence_rate([e[col] for e in errs_q], steps_q)
            pairwise.append(tuple(quantize(v) for v in r.pairwise))
            lsq.append(quantize(r.least_squares))
        # pairwise stored per level gap: tuple over gaps of (energy, vel, disp)
        pw = tuple(zip(*pairwise))
        return cls(form, degree, mode, fixed, steps_q, errs_q, pw, tuple(lsq))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# form={self.form} degree={self.degree} mode={self.mode} fixed={self.fixed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for s, e in zip(self.steps, self.errors):
            w.writerow([fmt(s), *map(fmt, e)])
        for k, r in enumerate(self.pairwise):
            w.writerow([f"rate_{k + 1}_{k + 2}", *map(fmt, r)])
        w.writerow(["rate_lsq", *map(fmt, self.least_squares)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConvergenceReport":
        lines = text.splitlines()
        meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split(" "))
        rows = list(csv.reader(lines[1:]))
        if tuple(rows[0]) != COLUMNS:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        steps, errors, pairwise, lsq = [], [], [], None
        for row in rows[1:]:
            vals = tuple(float(v) for v in row[1:])
            if row[0] == "rate_lsq":
                lsq = vals
            elif row[0].startswith("rate_"):
                pairwise.append(vals)
            else:
                steps.append(float(row[0]))
                errors.append(vals)
        return cls(meta["form"], int(meta["degree"]), meta["mode"], meta["fixed"],
                   tuple(steps), tuple(errors), tuple(pairwise), lsq)


def side_by_side_csv(reports) -> str:
    """One table with the columns of each report placed next to each other."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [COLUMNS[0]]
    for r in reports:
        header += [f"{r.form}_{c}" for c in COLUMNS[1:]]
    w.writerow(header)
    base = reports[0]
    for i, s in enumerate(base.steps):
        row = [fmt(s)]
        for r in reports:
            row += list(map(fmt, r.errors[i]))
        w.writerow(row)
    for k in range(len(base.pairwise)):
        row = [f"rate_{k + 1}_{k + 2}"]
        for r in reports:
            row += list(map(fmt, r.pairwise[k]))
        w.writerow(row)
    row = ["rate_lsq"]
    for r in reports:
        row += list(map(fmt, r.least_squares))
    w.writerow(row)
    return buf.getvalue()
