"""Student-t confidence intervals, Welch's t-test, and the results table.

Aggregation follows the evaluation protocol: each run contributes one scalar
(the mean test return), summaries are grouped per environment and method,
and every method is compared against the best one in its environment.
"""

import csv
import io
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats as sps


def confidence_interval(samples: Sequence[float], level: float = 0.95) -> Tuple[float, float]:
    """Mean and two-sided Student-t half-width: t_{(1+level)/2, n-1} * s / sqrt(n).

    A single sample has no spread estimate, so its half-width is 0.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("confidence_interval needs at least one sample")
    mean = float(x.mean())
    if x.size == 1:
        return mean, 0.0
    s = float(x.std(ddof=1))
    t = float(sps.t.ppf(0.5 + level / 2.0, x.size - 1))
    return mean, t * s / np.sqrt(x.size)


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float, float]:
    """Welch's unequal-variance t-test: (t, dof, two-sided p).

    Degrees of freedom follow Welch-Satterthwaite. Two degenerate samples
    with zero pooled variance compare as t=0, p=1 when the means agree and
    as an infinite statistic with p=0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("welch_t_test needs at least two samples per side")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    sa, sb = va / a.size, vb / b.size
    if sa + sb == 0.0:
        if ma == mb:
            return 0.0, float(a.size + b.size - 2), 1.0
        return float(np.sign(ma - mb)) * np.inf, float(a.size + b.size - 2), 0.0
    t = (ma - mb) / np.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (sa**2 / (a.size - 1) + sb**2 / (b.size - 1))
    p = 2.0 * float(sps.t.sf(abs(t), dof))
    return float(t), float(dof), p


@dataclass
class MethodSummary:
    env: str
    method: str
    n_runs: int
    mean: float
    ci_half: float
    p_vs_best: float   # NaN for the best method itself or when not computable
    rank: int          # 1 = best mean in its environment, 2 = second, ...


def summarize(samples: Dict[Tuple[str, str], Sequence[float]]) -> List[MethodSummary]:
    """Per-(environment, method) summaries, ranked by mean within each env."""
    rows: List[MethodSummary] = []
    envs = sorted({env for env, _ in samples})
    for env in envs:
        methods = sorted(m for e, m in samples if e == env)
        stats = {}
        for m in methods:
            mean, half = confidence_interval(samples[(env, m)])
            stats[m] = (mean, half)
        order = sorted(methods, key=lambda m: (-stats[m][0], m))
        best = order[0]
        for rank, m in enumerate(order, start=1):
            mean, half = stats[m]
            p = np.nan
            if m != best and len(samples[(env, m)]) >= 2 and len(samples[(env, best)]) >= 2:
                _, _, p = welch_t_test(samples[(env, m)], samples[(env, best)])
            rows.append(MethodSummary(env=env, method=m, n_runs=len(samples[(env, m)]),
                                      mean=mean, ci_half=half, p_vs_best=p, rank=rank))
    return rows


CSV_FIELDS = ("env", "method", "n_runs", "mean", "ci_half", "p_vs_best", "rank")


def report_csv(rows: List[MethodSummary]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        p = "" if np.isnan(r.p_vs_best) else format(r.p_vs_best, ".17g")
        w.writerow([r.env, r.method, r.n_runs, format(r.mean, ".17g"),
                    format(r.ci_half, ".17g"), p, r.rank])
    return out.getvalue()


def read_report_csv(text: str) -> List[MethodSummary]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        p = float(rec["p_vs_best"]) if rec["p_vs_best"] else np.nan
        rows.append(MethodSummary(env=rec["env"], method=rec["method"],
                                  n_runs=int(rec["n_runs"]), mean=float(rec["mean"]),
                                  ci_half=float(rec["ci_half"]), p_vs_best=p,
                                  rank=int(rec["rank"])))
    return rows


def report_text(rows: List[MethodSummary], alpha: float = 0.05) -> str:
    """Fixed-width table per environment: best method in **bold**, runner-up
    underlined with _..._, and a * on methods significantly below the best."""
    lines: List[str] = []
    for env in sorted({r.env for r in rows}):
        block = sorted((r for r in rows if r.env == env), key=lambda r: r.rank)
        lines.append(f"environment: {env}")
        width = max(len(r.method) for r in block) + 4
        for r in block:
            name = r.method
            if r.rank == 1 and len(block) > 1:
                name = f"**{name}**"
            elif r.rank == 2:
                name = f"_{name}_"
            sig = ""
            if not np.isnan(r.p_vs_best):
                sig = f"  p={r.p_vs_best:.4f}" + (" *" if r.p_vs_best < alpha else "")
            lines.append(f"  {name:<{width}} {r.mean:10.3f} +/- {r.ci_half:8.3f}"
                         f"  (n={r.n_runs}){sig}")
        lines.append("")
    return "\n".join(lines)
