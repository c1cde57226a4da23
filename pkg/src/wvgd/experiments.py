"""Experiment protocols: configuration, trials and result persistence.

Results are written as a tidy CSV (one row per trial) plus a JSON summary.
Wall-clock timings go to a separate ``*_timings.csv`` so the main CSV is
byte-identical across re-runs with the same config and seed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import RngStream, SquaredEuclideanCost
from .dynamics import init_state, run, widen
from .metrics import refresh_normalizers, score_grid, score_kde, score_wvgd
from .svgd import init_svgd, run_svgd
from .targets import (
    DATASET_NAMES,
    load_dataset,
    make_synthetic_dataset,
    make_synthetic_quasiperiodic,
    sample_random_mixture,
    write_csv,
)
from .tessellation import Tessellation, estimate_weights
from .varfit import pelbo

EXPERIMENTS = ("mixture_compare", "logreg_pelbo", "gp_partition")
DATA_ENV = "WVGD_DATA_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seeds: tuple = (0,)
    particle_counts: tuple = (3, 4, 5, 6, 7)
    svgd_particle_multiplier: int = 3
    n_repetitions: int = 15
    learning_rate: float = 0.05
    inner_lr: float = 0.1
    samples_per_step: int = 128
    n_steps: int = 3000
    init_std: float = 1.5
    init_log_std: float = 0.0
    svgd_learning_rate: float = 0.05
    svgd_steps: int = 3000
    eval_samples: int = 2000
    datasets: tuple = DATASET_NAMES
    subset_n: int = 50
    data_dir: str = ""
    gp_n_obs: int = 20
    gp_exponent: str = "squared"
    grid_size: int = 100
    grid_halfwidth: float = 3.0
    output_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        for name in ("seeds", "particle_counts", "datasets"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if not self.particle_counts or any(not isinstance(n, int) or n < 1 for n in self.particle_counts):
            raise ConfigError("particle_counts must be a non-empty list of integers >= 1")
        for name in ("svgd_particle_multiplier", "n_repetitions", "samples_per_step", "n_steps",
                     "svgd_steps", "eval_samples", "subset_n", "gp_n_obs", "grid_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("learning_rate", "inner_lr", "init_std", "svgd_learning_rate", "grid_halfwidth"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.eval_samples < 100:
            raise ConfigError("eval_samples must be at least 100")
        bad = [d for d in self.datasets if d not in DATASET_NAMES]
        if bad:
            raise ConfigError(f"unknown datasets {bad}; expected a subset of {list(DATASET_NAMES)}")
        if self.gp_exponent not in ("squared", "linear"):
            raise ConfigError("gp_exponent must be 'squared' or 'linear'")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "experiment" not in d:
            raise ConfigError("config needs an 'experiment' key")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def hash(self):
        """Short digest of every setting except the output location."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class ExperimentResult:
    rows: list
    header: list
    summary: dict
    timings: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)

    @property
    def n_failed(self):
        return sum(1 for r in self.rows if r[self.header.index("status")] != "ok")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _write_outputs(config, result, stem):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{stem}_{config.hash()}_seed{'-'.join(str(s) for s in config.seeds)}"
    paths = {"csv": out / f"{tag}.csv", "summary": out / f"{tag}_summary.json", "timings": out / f"{tag}_timings.csv"}
    paths["csv"].write_text(_csv_text(result.header, result.rows))
    summary = {"experiment": config.experiment, "config_hash": config.hash(), "seeds": list(config.seeds),
               "config": config.to_dict(), **result.summary}
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["timings"].write_text(_csv_text(["key", "runtime_ms"], result.timings))
    result.paths = {k: str(v) for k, v in paths.items()}
    return result


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, 1000.0 * (time.perf_counter() - t0)


def _quartiles(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"n": 0, "median": None, "q25": None, "q75": None, "iqr": None}
    q25, med, q75 = np.percentile(x, [25, 50, 75])
    return {"n": int(x.size), "median": float(med), "q25": float(q25), "q75": float(q75), "iqr": float(q75 - q25)}


# --------------------------------------------------------------------------
# mixture of Gaussians: WVGD vs SVGD + KDE
# --------------------------------------------------------------------------

MIXTURE_HEADER = ["config_hash", "seed", "rep", "N", "method", "n_particles", "status", "l2_error", "kde_bandwidth", "error"]


def mixture_trial(config, seed, rep, N):
    """One repetition at one particle count: a fresh random mixture scored with both methods.

    Returns a list of (method, n_particles, l2_error, bandwidth, runtime_ms).
    """
    base = RngStream(seed).spawn(rep, N)
    target = sample_random_mixture(base.spawn(0))
    grid = score_grid(target)
    out = []

    def wvgd_part():
        init = np.sort(config.init_std * base.spawn(1).generator().standard_normal(N))[:, None]
        st = init_state(init, config.learning_rate, config.inner_lr, config.samples_per_step, config.init_log_std)
        res = run(st, target, n_steps=config.n_steps, rng=base.spawn(2), record_every=0)
        st = refresh_normalizers(res.state, config.eval_samples, base.spawn(3))
        t = Tessellation(st.ensemble, SquaredEuclideanCost())
        w = estimate_weights(t, target, widen(st.components), config.eval_samples, base.spawn(4))
        return score_wvgd(st, w, target, grid).l2_error

    err, ms = _timed(wvgd_part)
    out.append(("wvgd", N, err, float("nan"), ms))

    def svgd_part():
        M = config.svgd_particle_multiplier * N
        init = config.init_std * base.spawn(5).generator().standard_normal((M, 1))
        st, _ = run_svgd(init_svgd(init, config.svgd_learning_rate), target, config.svgd_steps, rng=base.spawn(6))
        score, bw = score_kde(st.particles.ravel(), target, grid)
        return score.l2_error, bw

    (err, bw), ms = _timed(svgd_part)
    out.append(("svgd", config.svgd_particle_multiplier * N, err, bw, ms))
    return out


def run_mixture_compare(config: ExperimentConfig, write=True, progress=None) -> ExperimentResult:
    rows, timings = [], []
    for seed in sorted(config.seeds):
        for rep in range(config.n_repetitions):
            for N in sorted(config.particle_counts):
                try:
                    trial = mixture_trial(config, seed, rep, N)
                except Exception as e:  # recorded, never dropped
                    msg = f"{type(e).__name__}: {e}"
                    for method, n in (("svgd", config.svgd_particle_multiplier * N), ("wvgd", N)):
                        rows.append([config.hash(), seed, rep, N, method, n, "error", float("nan"), float("nan"), msg])
                    continue
                for method, n, err, bw, ms in sorted(trial):
                    rows.append([config.hash(), seed, rep, N, method, n, "ok", err, bw, ""])
                    timings.append([f"{seed}/{rep}/{N}/{method}", ms])
                if progress:
                    progress(seed, rep, N, trial)
    result = ExperimentResult(rows, MIXTURE_HEADER, {"per_N": mixture_summary(rows)}, timings)
    return _write_outputs(config, result, "mixture_compare") if write else result


def mixture_summary(rows):
    h = MIXTURE_HEADER
    out = {}
    for N in sorted({r[h.index("N")] for r in rows}):
        entry = {}
        for method in ("wvgd", "svgd"):
            errs = [r[h.index("l2_error")] for r in rows
                    if r[h.index("N")] == N and r[h.index("method")] == method and r[h.index("status")] == "ok"]
            entry[method] = _quartiles(errs)
        if entry["wvgd"]["n"] and entry["svgd"]["n"]:
            entry["wvgd_better"] = entry["wvgd"]["median"] < entry["svgd"]["median"]
        out[str(N)] = entry
    return out


# --------------------------------------------------------------------------
# Bayesian logistic regression: PELBO against particle count
# --------------------------------------------------------------------------

LOGREG_HEADER = ["config_hash", "seed", "dataset", "source", "rep", "N", "status", "pelbo", "pelbo_se", "error"]


def resolve_dataset(name, config):
    """Path to ``<name>.csv`` under WVGD_DATA_DIR or the configured data_dir, else None."""
    for root in (os.environ.get(DATA_ENV, ""), config.data_dir):
        if root:
            p = Path(root) / f"{name}.csv"
            if p.is_file():
                return p
    return None


def _dataset_source(name, config, seed, tmp_dir):
    path = resolve_dataset(name, config)
    if path is not None:
        return path, "file"
    header, data = make_synthetic_dataset(name, RngStream(seed).spawn(900, DATASET_NAMES.index(name)))
    path = Path(tmp_dir) / f"synthetic_{name}_seed{seed}.csv"
    write_csv(path, header, data)
    return path, "synthetic"


def logreg_trial(config, target, seed, d_idx, rep, N):
    """Fit WVGD with N particles and return (pelbo, se)."""
    base = RngStream(seed).spawn(d_idx, rep, N)
    gen = base.spawn(0).generator()
    init = 0.5 * gen.standard_normal((N, target.dim))
    st = init_state(init, config.learning_rate, config.inner_lr, config.samples_per_step, config.init_log_std)
    res = run(st, target, n_steps=config.n_steps, rng=base.spawn(1), record_every=0)
    st = res.state
    t = Tessellation(st.ensemble, SquaredEuclideanCost())
    w = estimate_weights(t, target, widen(st.components), config.eval_samples, base.spawn(2))
    est = pelbo(st, t, target, w, config.eval_samples, base.spawn(3))
    return est.value, est.std_error


def run_logreg_pelbo(config: ExperimentConfig, write=True, progress=None) -> ExperimentResult:
    import tempfile

    rows, timings = [], []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in sorted(config.seeds):
            for name in config.datasets:
                d_idx = DATASET_NAMES.index(name)
                try:
                    path, source = _dataset_source(name, config, seed, tmp)
                except Exception as e:
                    msg = f"{type(e).__name__}: {e}"
                    for rep in range(config.n_repetitions):
                        for N in sorted(config.particle_counts):
                            rows.append([config.hash(), seed, name, "missing", rep, N, "error", float("nan"), float("nan"), msg])
                    continue
                for rep in range(config.n_repetitions):
                    try:
                        target = load_dataset(name, path, config.subset_n, RngStream(seed).spawn(800, d_idx, rep))
                    except Exception as e:
                        msg = f"{type(e).__name__}: {e}"
                        for N in sorted(config.particle_counts):
                            rows.append([config.hash(), seed, name, source, rep, N, "error", float("nan"), float("nan"), msg])
                        continue
                    for N in sorted(config.particle_counts):
                        try:
                            (val, se), ms = _timed(lambda: logreg_trial(config, target, seed, d_idx, rep, N))
                        except Exception as e:
                            rows.append([config.hash(), seed, name, source, rep, N, "error", float("nan"), float("nan"),
                                         f"{type(e).__name__}: {e}"])
                            continue
                        rows.append([config.hash(), seed, name, source, rep, N, "ok", val, se, ""])
                        timings.append([f"{seed}/{name}/{rep}/{N}", ms])
                        if progress:
                            progress(seed, name, rep, N, val)
    result = ExperimentResult(rows, LOGREG_HEADER, {"table": logreg_summary(rows)}, timings)
    return _write_outputs(config, result, "logreg_pelbo") if write else result


def logreg_summary(rows):
    """Per dataset and particle count: mean PELBO and standard error of the mean over repetitions."""
    h = LOGREG_HEADER
    table = {}
    for name in sorted({r[h.index("dataset")] for r in rows}):
        sources = sorted({r[h.index("source")] for r in rows if r[h.index("dataset")] == name})
        per_n = {}
        for N in sorted({r[h.index("N")] for r in rows}):
            vals = np.array([r[h.index("pelbo")] for r in rows
                             if r[h.index("dataset")] == name and r[h.index("N")] == N and r[h.index("status")] == "ok"])
            sem = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else None
            per_n[str(N)] = {"n": int(vals.size), "mean": float(vals.mean()) if vals.size else None, "sem": sem}
        table[name] = {"source": ",".join(sources), "per_N": per_n}
    return table


# --------------------------------------------------------------------------
# GP hyperparameter partition
# --------------------------------------------------------------------------

GP_PARAMS = ("log_A", "log_f", "log_s", "log_B")
GP_GRID_AXES = (1, 3)


def gp_grid_slice(particles, j, grid_size, halfwidth):
    """Grid over (log f, log B) centred on particle j, other coordinates fixed at particle j's."""
    z = np.asarray(particles)
    a, b = GP_GRID_AXES
    u = np.linspace(z[j, a] - halfwidth, z[j, a] + halfwidth, grid_size)
    v = np.linspace(z[j, b] - halfwidth, z[j, b] + halfwidth, grid_size)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.repeat(z[j][None, :], grid_size * grid_size, axis=0)
    pts[:, a] = U.ravel()
    pts[:, b] = V.ravel()
    return pts


GP_HEADER = ["config_hash", "seed", "N", "slice", "i", "k", "log_f", "log_B", "status", "cell"]


def run_gp_partition(config: ExperimentConfig, write=True, progress=None) -> ExperimentResult:
    """WVGD on the 4D GP hyperparameter posterior; emits cell assignments on grid slices.

    Each particle gets its own 100x100 slice through its position. Final
    particles and cell weights go to the JSON summary.
    """
    rows, timings, runs = [], [], {}
    failed = []
    for seed in sorted(config.seeds):
        base = RngStream(seed)
        for N in sorted(config.particle_counts):
            try:
                def fit():
                    target = make_synthetic_quasiperiodic(config.gp_n_obs, base.spawn(700), exponent=config.gp_exponent)
                    init = 0.5 * base.spawn(701, N).generator().standard_normal((N, 4))
                    st = init_state(init, config.learning_rate, config.inner_lr, config.samples_per_step, config.init_log_std)
                    res = run(st, target, n_steps=config.n_steps, rng=base.spawn(702, N), record_every=0)
                    t = Tessellation(res.state.ensemble, SquaredEuclideanCost())
                    w = estimate_weights(t, target, widen(res.state.components), config.eval_samples, base.spawn(703, N))
                    return res.state, t, w
                (st, t, w), ms = _timed(fit)
            except Exception as e:
                failed.append({"seed": seed, "N": N, "error": f"{type(e).__name__}: {e}"})
                rows.append([config.hash(), seed, N, -1, -1, -1, float("nan"), float("nan"), "error", -1])
                continue
            timings.append([f"{seed}/{N}", ms])
            for j in range(N):
                pts = gp_grid_slice(st.particles, j, config.grid_size, config.grid_halfwidth)
                cells = t.assign(pts)
                for idx in range(pts.shape[0]):
                    i, k = divmod(idx, config.grid_size)
                    rows.append([config.hash(), seed, N, j, i, k, pts[idx, 1], pts[idx, 3], "ok", int(cells[idx])])
            runs[f"{seed}/{N}"] = {
                "seed": seed,
                "N": N,
                "params": list(GP_PARAMS),
                "particles": st.particles.tolist(),
                "weights": w.weights.tolist(),
                "weight_se": w.std_errors.tolist(),
                "component_means": [c.mean.tolist() for c in st.components],
                "component_log_stds": [c.log_std.tolist() for c in st.components],
            }
            if progress:
                progress(seed, N, st)
    result = ExperimentResult(rows, GP_HEADER, {"runs": runs, "failures": failed}, timings)
    return _write_outputs(config, result, "gp_partition") if write else result


RUNNERS = {
    "mixture_compare": run_mixture_compare,
    "logreg_pelbo": run_logreg_pelbo,
    "gp_partition": run_gp_partition,
}


def run_experiment(config: ExperimentConfig, write=True, progress=None) -> ExperimentResult:
    return RUNNERS[config.experiment](config, write=write, progress=progress)


def with_overrides(config, seed=None, out=None):
    kw = {}
    if seed is not None:
        kw["seeds"] = (int(seed),)
    if out is not None:
        kw["output_dir"] = str(out)
    return replace(config, **kw) if kw else config
