"""Two-cohort hypothesis testing with a Gaussianity gate.

Both cohorts pass Shapiro-Wilk at 0.05 -> pooled Student t-test, otherwise
Mann-Whitney U. No multiple-comparison correction is applied.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import namedtuple
from dataclasses import asdict, dataclass
from statistics import NormalDist

import numpy as np

from .features import BAND_IDS, FEATURES, feature_name, format_th

logger = logging.getLogger(__name__)

SIGNIFICANCE = 0.05
EXACT_MW_MAX_N = 16
DEFAULT_TH = (50, 60, 70, 80, 90)

NormalityResult = namedtuple("NormalityResult", "W pvalue is_gaussian note")
TTestResult = namedtuple("TTestResult", "statistic pvalue df note")
MannWhitneyResult = namedtuple("MannWhitneyResult", "statistic pvalue exact")

_STD_NORMAL = NormalDist()


class StatsError(ValueError):
    pass


# ---------------------------------------------------------------- Shapiro-Wilk

def _poly(coefs, x):
    """Evaluate c0 + c1 x + c2 x^2 + ..."""
    out = 0.0
    for c in reversed(coefs):
        out = out * x + c
    return out


_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def shapiro_coefficients(n: int) -> np.ndarray:
    """Royston's approximation to the Shapiro-Wilk weights, largest first (n//2 values)."""
    if n < 3:
        raise StatsError("Shapiro-Wilk needs at least 3 observations")
    half = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    m = np.array([_STD_NORMAL.inv_cdf((n - i + 1 - 0.375) / (n + 0.25)) for i in range(1, half + 1)])
    summ2 = 2.0 * float(np.sum(m ** 2))
    ssumm2 = math.sqrt(summ2)
    u = 1.0 / math.sqrt(n)
    a = m / ssumm2
    a1 = _poly(_C1, u) + m[0] / ssumm2
    if n > 5:
        a2 = _poly(_C2, u) + m[1] / ssumm2
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1 ** 2 - 2 * a2 ** 2))
        a = m / fac
        a[0], a[1] = a1, a2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1 ** 2))
        a = m / fac
        a[0] = a1
    return a


def shapiro_wilk(values) -> NormalityResult:
    """W statistic and p-value (Royston 1995) with the 0.05 Gaussianity verdict."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = len(x)
    if n < 3:
        raise StatsError("Shapiro-Wilk needs at least 3 observations")
    if n > 5000:
        raise StatsError("Shapiro-Wilk approximation is valid up to n = 5000")
    if x[-1] - x[0] == 0:
        return NormalityResult(float("nan"), 0.0, False, "constant sample")

    a = shapiro_coefficients(n)
    half = len(a)
    num = float(np.sum(a * (x[::-1][:half] - x[:half]))) ** 2
    ss = float(np.sum((x - x.mean()) ** 2))
    w = min(num / ss, 1.0)

    if n == 3:
        p = max(0.0, 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75))))
        return NormalityResult(w, min(p, 1.0), p > SIGNIFICANCE, "")

    w1 = math.log(1.0 - w) if w < 1.0 else -math.inf
    if n <= 11:
        gamma = _poly(_G, n)
        if w1 >= gamma:
            return NormalityResult(w, 1e-99, False, "")
        y = -math.log(gamma - w1)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        y = w1
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    if math.isinf(y):
        p = 1.0
    else:
        p = 1.0 - _STD_NORMAL.cdf((y - mu) / sigma)
    return NormalityResult(w, p, p > SIGNIFICANCE, "")


def normality_test(values) -> NormalityResult:
    return shapiro_wilk(values)


# ---------------------------------------------------------------- Student t

def _betacf(a, b, x, max_iter=300, tol=3e-16):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        step = d * c
        h *= step
        if abs(step - 1.0) < tol:
            return h
    raise StatsError("incomplete beta continued fraction did not converge")


def betainc(a, b, x) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise StatsError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, df) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


def t_test_unpaired(a, b) -> TTestResult:
    """Pooled-variance two-sided Student t-test."""
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise StatsError("t-test needs at least two values per sample")
    df = n1 + n2 - 2
    diff = a.mean() - b.mean()
    pooled = (np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)) / df
    se = math.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
    if se == 0:
        if diff == 0:
            return TTestResult(0.0, 1.0, df, "both samples constant and equal")
        return TTestResult(math.copysign(math.inf, diff), 0.0, df, "zero variance")
    t = float(diff / se)
    return TTestResult(t, t_two_sided_p(t, df), df, "")


# ---------------------------------------------------------------- Mann-Whitney

def rankdata(values) -> np.ndarray:
    """Ranks starting at 1, ties share the mean rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v))
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def u_distribution(n1: int, n2: int) -> list[int]:
    """Counts of each U value 0..n1*n2 over all C(n1+n2, n1) rank assignments."""
    # counts[m][n] built by f(u; m, n) = f(u - n; m - 1, n) + f(u; m, n - 1)
    prev_row = [[1] for _ in range(n2 + 1)]  # m = 0
    for m in range(1, n1 + 1):
        row = [[1]]  # n = 0
        for n in range(1, n2 + 1):
            size = m * n + 1
            cur = [0] * size
            left = prev_row[n]  # (m - 1, n), shifted by n
            for u, c in enumerate(left):
                cur[u + n] += c
            for u, c in enumerate(row[n - 1]):  # (m, n - 1)
                cur[u] += c
            row.append(cur)
        prev_row = row
    return prev_row[n2]


def mann_whitney_u(a, b, exact_max_n=EXACT_MW_MAX_N) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U with U = min(U1, U2).

    Exact distribution when n1 + n2 <= ``exact_max_n`` and there are no ties,
    otherwise a tie- and continuity-corrected normal approximation.
    """
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise StatsError("Mann-Whitney needs non-empty samples")
    ranks = rankdata(np.concatenate([a, b]))
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    u = min(u1, n1 * n2 - u1)
    n = n1 + n2
    has_ties = len(np.unique(ranks)) < n

    if n <= exact_max_n and not has_ties:
        counts = u_distribution(n1, n2)
        tail = sum(counts[: int(u) + 1])
        return MannWhitneyResult(u, min(1.0, 2 * tail / math.comb(n, n1)), True)

    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return MannWhitneyResult(u, 1.0, False)
    z = max(0.0, abs(u - n1 * n2 / 2.0) - 0.5) / math.sqrt(var)
    return MannWhitneyResult(u, min(1.0, math.erfc(z / math.sqrt(2.0))), False)


# ---------------------------------------------------------------- comparisons

@dataclass
class SampleSet:
    values: list
    cohort: str = ""
    study_group: str = ""
    excluded: int = 0

    @classmethod
    def from_raw(cls, raw, cohort="", study_group=""):
        raw = [float(v) for v in raw]
        kept = [v for v in raw if math.isfinite(v)]
        return cls(kept, cohort, study_group, len(raw) - len(kept))


@dataclass
class GroupComparisonResult:
    study_group: str
    band: str
    feature: str
    Th: float
    test_used: str
    statistic: float
    p_value: float
    significant: bool
    direction: int
    n1: int
    n2: int
    excluded1: int = 0
    excluded2: int = 0
    note: str = ""


def _gaussian(sample):
    if len(sample) < 3:
        return False
    return normality_test(sample).is_gaussian


def choose_test(a_gaussian: bool, b_gaussian: bool) -> str:
    return "t_test" if a_gaussian and b_gaussian else "mann_whitney"


def compare_samples(a: SampleSet, b: SampleSet, group="", band="", feature="", th=float("nan")):
    n1, n2 = len(a.values), len(b.values)
    base = dict(study_group=group, band=band, feature=feature, Th=th, n1=n1, n2=n2,
                excluded1=a.excluded, excluded2=b.excluded)
    if n1 < 2 or n2 < 2:
        return GroupComparisonResult(test_used="untestable", statistic=float("nan"),
                                     p_value=float("nan"), significant=False, direction=0,
                                     note="fewer than 2 usable values", **base)
    test = choose_test(_gaussian(a.values), _gaussian(b.values))
    if test == "t_test":
        r = t_test_unpaired(a.values, b.values)
        stat, p, note = r.statistic, r.pvalue, r.note
    else:
        r = mann_whitney_u(a.values, b.values)
        stat, p, note = r.statistic, r.pvalue, "exact" if r.exact else "normal approximation"
    direction = int(np.sign(np.median(a.values) - np.median(b.values)))
    return GroupComparisonResult(test_used=test, statistic=float(stat), p_value=float(p),
                                 significant=bool(p < SIGNIFICANCE), direction=direction,
                                 note=note, **base)


def compare_groups(feature_rows, manifest, study_groups=None, bands=BAND_IDS, th_list=DEFAULT_TH):
    """Test every (study group, band, feature, Th) cell.

    ``feature_rows`` are dicts as produced by ``read_feature_csv``. Patients
    with no row for a cell (no confident coughs) count as excluded.
    """
    study_groups = list(study_groups or manifest.study_groups)
    table = {}
    for row in feature_rows:
        table[(row["patient_id"], float(row["Th"]), row["band"])] = row

    results = []
    for group in study_groups:
        membership = manifest.membership(group)
        cohorts = {c: [p for p, s in membership.items() if s == c] for c in ("C1", "C2")}
        for band in bands:
            for feature in FEATURES:
                for th in th_list:
                    samples = []
                    for c in ("C1", "C2"):
                        raw = [table.get((p, float(th), band), {}).get(feature, float("nan"))
                               for p in cohorts[c]]
                        samples.append(SampleSet.from_raw(raw, c, group))
                    res = compare_samples(samples[0], samples[1], group, band,
                                          feature_name(feature, band), th)
                    if res.excluded1 or res.excluded2:
                        logger.debug("%s %s %s Th=%s: dropped %d/%d undefined values", group, band,
                                     res.feature, th, res.excluded1, res.excluded2)
                    results.append(res)
    return results


def best_thresholds(results):
    """Minimum-p threshold per (study group, band, feature); ties keep the first Th."""
    best = {}
    for r in results:
        key = (r.study_group, r.band, r.feature)
        if math.isnan(r.p_value):
            best.setdefault(key, r)
            continue
        cur = best.get(key)
        if cur is None or math.isnan(cur.p_value) or r.p_value < cur.p_value:
            best[key] = r
    return list(best.values())


RESULT_COLUMNS = [f for f in GroupComparisonResult.__dataclass_fields__]


def _cell(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_results_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            d = asdict(r)
            d["Th"] = format_th(d["Th"])
            w.writerow([_cell(d[c]) for c in RESULT_COLUMNS])


def write_band_tables(directory, results, bands=BAND_IDS) -> list:
    """One CSV per band: rows are study groups, each feature gives best p and its Th.

    Th is written as a fraction (70 -> 0.7) to match the usual table headers.
    """
    best = {(r.study_group, r.band, r.feature): r for r in best_thresholds(results)}
    groups = list(dict.fromkeys(r.study_group for r in results))
    paths = []
    for band in bands:
        feats = [feature_name(f, band) for f in FEATURES]
        path = f"{directory}/table_{band}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["study_group"]
            for f in feats:
                header += [f"{f}_p", f"{f}_Th", f"{f}_significant"]
            w.writerow(header)
            for g in groups:
                row = [g]
                for f in feats:
                    r = best.get((g, band, f))
                    if r is None or math.isnan(r.p_value):
                        row += ["", "", "false"]
                    else:
                        row += [f"{r.p_value:.4f}", repr(round(float(r.Th) / 100.0, 6)),
                                str(r.significant).lower()]
                w.writerow(row)
        paths.append(path)
    return paths
