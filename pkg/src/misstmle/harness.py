"""Monte Carlo study orchestration.

Each replication draws one complete dataset per scenario, imposes each
mechanism's mask on that same dataset, and runs every requested method on the
identical masked data (paired comparisons). Failures are recorded, never
fatal. Replications parallelize across processes; every stream is derived
from (master seed, replication, cell), so outputs are byte-identical
regardless of the process count.
"""

from __future__ import annotations

import multiprocessing
import time
from dataclasses import dataclass, field

import numpy as np

from . import datagen, missing
from .core import RngStream, format_float
from .tmle import TmleConfig

MDAG_CHOICES = (datagen.MDAG_A, datagen.MDAG_B, datagen.MDAG_NONE)

RESULT_FIELDS = ("scenario", "mdag", "method", "rep", "psi", "se", "n_used", "failed", "error")


@dataclass(frozen=True)
class StudyConfig:
    scenarios: tuple[str, ...] = datagen.SCENARIOS
    mdags: tuple[str, ...] = (datagen.MDAG_A, datagen.MDAG_B)
    methods: tuple[str, ...] = missing.METHODS
    n_per_dataset: int = 1000
    n_reps: int = 200
    m: int = 5
    cycles: int = 10
    master_seed: int = 20260810
    truth: float = datagen.TRUE_EFFECT
    jobs: int = 1

    def __post_init__(self):
        if self.n_reps < 2:
            raise ValueError("need at least two replications")
        if self.truth == 0.0:
            raise ValueError("relative bias is undefined at a zero true effect")
        for s in self.scenarios:
            if s not in datagen.SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}")
        for g in self.mdags:
            if g not in MDAG_CHOICES:
                raise ValueError(f"unknown missingness mechanism {g!r}")
        for m in self.methods:
            if m not in missing.METHODS:
                raise ValueError(f"unknown method {m!r}")


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    mdag: str
    method: str
    rep: int
    psi: float
    se: float
    n_used: int
    failed: bool
    error: str
    seconds: float


def _cell_streams(cfg: StudyConfig, rep: int, scenario: str, mdag: str):
    base = RngStream(cfg.master_seed)
    s_idx = datagen.SCENARIOS.index(scenario)
    g_idx = MDAG_CHOICES.index(mdag)
    data_stream = base.child(0, rep, s_idx)
    mask_stream = base.child(1, rep, s_idx, g_idx)
    method_streams = {m: base.child(2, rep, s_idx, g_idx, missing.METHODS.index(m))
                      for m in cfg.methods}
    return data_stream, mask_stream, method_streams


def run_cell(cfg: StudyConfig, rep: int, scenario: str, mdag: str) -> list[ResultRow]:
    """All requested methods on one replication's masked dataset."""
    data_stream, mask_stream, method_streams = _cell_streams(cfg, rep, scenario, mdag)
    model = datagen.default_complete_model(scenario)
    d = datagen.generate_complete(model, cfg.n_per_dataset, data_stream)
    if mdag != datagen.MDAG_NONE:
        mmodel = datagen.default_missingness_model(scenario, mdag)
        d = datagen.impose_missingness(d, mmodel, mask_stream)
    config = TmleConfig()
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            res = missing.estimate(d, method, config, method_streams[method],
                                   m=cfg.m, cycles=cfg.cycles)
            rows.append(ResultRow(scenario, mdag, method, rep, res.psi, res.se,
                                  res.n_used, False, "", time.perf_counter() - t0))
        except Exception as exc:  # noqa: BLE001 - a failed cell must not kill the study
            rows.append(ResultRow(scenario, mdag, method, rep, float("nan"), float("nan"),
                                  0, True, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0))
    return rows


def _run_cell_star(args):
    return run_cell(*args)


def run_study(cfg: StudyConfig, progress=None) -> list[ResultRow]:
    """Full grid of (replication, scenario, mdag) cells, sorted canonically."""
    # warm the calibration caches before forking so workers inherit them
    for scenario in cfg.scenarios:
        datagen.default_complete_model(scenario)
        for mdag in cfg.mdags:
            if mdag != datagen.MDAG_NONE:
                datagen.default_missingness_model(scenario, mdag)

    cells = [(cfg, rep, scenario, mdag)
             for rep in range(cfg.n_reps)
             for scenario in cfg.scenarios
             for mdag in cfg.mdags]
    rows: list[ResultRow] = []
    if cfg.jobs <= 1:
        for i, cell in enumerate(cells):
            rows.extend(run_cell(*cell))
            if progress:
                progress(i + 1, len(cells))
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=cfg.jobs) as pool:
            for i, part in enumerate(pool.imap_unordered(_run_cell_star, cells, chunksize=1)):
                rows.extend(part)
                if progress:
                    progress(i + 1, len(cells))
    order = {m: i for i, m in enumerate(missing.METHODS)}
    rows.sort(key=lambda r: (cfg.scenarios.index(r.scenario), cfg.mdags.index(r.mdag),
                             r.rep, order[r.method]))
    return rows


def relative_bias(psis, psi0: float) -> tuple[float, float]:
    """(percent relative bias, its Monte Carlo SE)."""
    if psi0 == 0.0:
        raise ValueError("relative bias is undefined at psi0 = 0")
    psis = np.asarray(psis, dtype=float)
    r = psis.shape[0]
    # constant vectors short-circuit so exact recovery reports exactly zero
    mean = float(psis[0]) if np.ptp(psis) == 0 else float(np.mean(psis))
    sd = 0.0 if np.ptp(psis) == 0 else float(np.std(psis, ddof=1))
    pct = 100.0 * (mean - psi0) / psi0
    mcse = 100.0 * sd / (abs(psi0) * np.sqrt(r)) if r > 1 else float("nan")
    return pct, mcse


def empirical_se(psis) -> tuple[float, float]:
    """(sample SD of the estimates, its Monte Carlo SE)."""
    psis = np.asarray(psis, dtype=float)
    r = psis.shape[0]
    if r <= 1:
        return float("nan"), float("nan")
    se = 0.0 if np.ptp(psis) == 0 else float(np.std(psis, ddof=1))
    return se, se / np.sqrt(2.0 * (r - 1))


def model_se_error(ses, emp_se: float) -> tuple[float, float]:
    """(percent error of the average model SE against the empirical SE, MCSE).

    The average model SE is the root mean of the squared model SEs.
    """
    if emp_se == 0.0:
        raise ValueError("model SE error is undefined at zero empirical SE")
    ses = np.asarray(ses, dtype=float)
    r = ses.shape[0]
    mod_se = float(np.sqrt(np.mean(ses**2)))
    pct = 100.0 * (mod_se / emp_se - 1.0)
    if r > 1 and mod_se > 0:
        var_s2 = float(np.var(ses**2, ddof=1))
        mcse = 100.0 * (mod_se / emp_se) * np.sqrt(var_s2 / (4.0 * r * mod_se**4) + 1.0 / (2.0 * (r - 1)))
    else:
        mcse = float("nan")
    return pct, float(mcse)


@dataclass(frozen=True)
class CellMetrics:
    scenario: str
    mdag: str
    method: str
    n_reps: int
    n_failed: int
    mean_psi: float
    mean_se: float
    rel_bias_pct: float
    rel_bias_mcse: float
    emp_se: float
    emp_se_mcse: float
    mod_se_err_pct: float
    mod_se_err_mcse: float


def compute_metrics(rows: list[ResultRow], cfg: StudyConfig) -> list[CellMetrics]:
    """Per (scenario, mdag, method) performance metrics over the successful
    replications."""
    out = []
    for scenario in cfg.scenarios:
        for mdag in cfg.mdags:
            for method in cfg.methods:
                cell = [r for r in rows if r.scenario == scenario and r.mdag == mdag
                        and r.method == method]
                good = [r for r in cell if not r.failed and np.isfinite(r.psi) and np.isfinite(r.se)]
                n_failed = len(cell) - len(good)
                if len(good) >= 2:
                    psis = np.array([r.psi for r in good])
                    ses = np.array([r.se for r in good])
                    rb, rb_mcse = relative_bias(psis, cfg.truth)
                    es, es_mcse = empirical_se(psis)
                    if es > 0:
                        me, me_mcse = model_se_error(ses, es)
                    else:
                        me, me_mcse = float("nan"), float("nan")
                    out.append(CellMetrics(scenario, mdag, method, len(good), n_failed,
                                           float(np.mean(psis)), float(np.mean(ses)),
                                           rb, rb_mcse, es, es_mcse, me, me_mcse))
                else:
                    nan = float("nan")
                    out.append(CellMetrics(scenario, mdag, method, len(good), n_failed,
                                           nan, nan, nan, nan, nan, nan, nan, nan))
    return out


def rows_to_csv(rows: list[ResultRow]) -> str:
    lines = [",".join(RESULT_FIELDS)]
    for r in rows:
        err = r.error.replace(",", ";").replace("\n", " ")
        lines.append(",".join([r.scenario, r.mdag, r.method, str(r.rep),
                               format_float(r.psi), format_float(r.se), str(r.n_used),
                               "1" if r.failed else "0", err]))
    return "\n".join(lines) + "\n"


def rows_from_csv(text: str) -> list[ResultRow]:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or tuple(lines[0].split(",")) != RESULT_FIELDS:
        raise ValueError("unexpected results.csv header")
    rows = []
    for ln in lines[1:]:
        scenario, mdag, method, rep, psi, se, n_used, failed, error = ln.split(",", 8)
        rows.append(ResultRow(scenario, mdag, method, int(rep), float(psi), float(se),
                              int(n_used), failed == "1", error, 0.0))
    return rows
