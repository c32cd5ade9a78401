"""Configuration-driven experiment runner.

A run goes: build mechanisms -> schedule -> encoder -> shared-context basis
-> transition probes -> recover and smooth -> optional calibration -> scores
and diagnostics.  Transition data at step ``t`` is the encoded one-step
output of ``n_probe`` seeded contexts under ``W(alpha*(t))``, averaged; this
is the estimate a batch of transition trajectories sharing one schedule
would give at that step.
"""

import dataclasses
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .basis import CONTEXT_MEAN, BasisWarning, ConditionalSampler, estimate_delta_approx
from .diagnostics import DiagnosticsReport, check_pointwise_bound, verify_assumption
from .encoder import EncoderSim, random_distortion
from .errors import InvalidInputError, MechmixError
from .generator import (EdgeInjection, build_mechanism_set, make_mixing_map, make_schedule,
                        rng_stream, write_metadata)
from .metrics import (ScoreCard, mae, mcc, per_component_correlation, w_trajectory_correlation,
                      weight_correlation)
from .recovery import (DEFAULT_LAMBDA_GRID, SmoothingConfig, calibrate_two_point,
                       residual_norms, smooth)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a synthetic run.

    ``active_domains`` defaults to the first ``K_active`` domains.  With
    ``violation`` set, an extra edge ``z_2 -> z_5`` of weight ``edge_weight``
    switches on while ``0.3 < alpha_1 < 0.7``.  ``activation_slope = 1``
    gives linear dynamics.
    """

    d: int = 8
    K_total: int = 5
    K_active: int = 3
    active_domains: tuple = (0, 2, 4)
    T: int = 100
    family: str = "sequential"
    noise_sigma: float = 0.1
    perturbation_norm: float = 0.5
    activation_slope: float = 0.2
    encoder: str = "oracle"
    distortion_seed: int = 1000
    representation_noise: float = 0.0
    obs_dim: int = 16
    mixing_depth: int = 3
    n_contexts: int = 200
    n_probe: int = 200
    probe_mode: str = "resampled"
    context_mean: float = CONTEXT_MEAN
    moment_match: bool = True
    smoothing: str = "window"
    window: int = 5
    lam: float = -1.0
    calibrate: bool = True
    ks_samples: int = 200
    violation: bool = False
    edge_weight: float = 1.5
    seeds: tuple = tuple(range(10))
    output: str = ""
    sweep_axis: str = ""
    sweep_values: tuple = ()

    def __post_init__(self):
        active = self.resolved_active()
        if not 2 <= len(active) <= self.K_total:
            raise InvalidInputError("need 2 <= K_active <= K_total")
        if len(active) > self.d + 1:
            raise InvalidInputError(f"K_active={len(active)} exceeds the capacity d+1={self.d + 1}")
        if len(set(active)) != len(active) or max(active) >= self.K_total or min(active) < 0:
            raise InvalidInputError(f"invalid active domains {active}")
        if self.active_domains and len(self.active_domains) != self.K_active:
            raise InvalidInputError("active_domains must list exactly K_active domains")
        if not self.seeds:
            raise InvalidInputError("seeds must be nonempty")
        if self.encoder not in ("oracle", "distorted"):
            raise InvalidInputError(f"unknown encoder mode {self.encoder!r}")
        if self.smoothing not in ("window", "tv", "none"):
            raise InvalidInputError(f"unknown smoothing {self.smoothing!r}")
        if self.noise_sigma < 0 or self.perturbation_norm <= 0:
            raise InvalidInputError("need noise_sigma >= 0 and perturbation_norm > 0")
        if self.violation and self.K_total < 3:
            raise InvalidInputError("the violation construction needs K_total >= 3")

    def resolved_active(self):
        if self.active_domains:
            return tuple(int(k) for k in self.active_domains)
        return tuple(range(self.K_active))

    def smoothing_config(self):
        lam = None if self.lam < 0 else self.lam
        return SmoothingConfig(self.smoothing, self.window, lam, DEFAULT_LAMBDA_GRID)

    def replace(self, **changes):
        if "K_active" in changes and "active_domains" not in changes:
            changes["active_domains"] = ()
        return replace(self, **changes)


# --------------------------------------------------------------------------
# Flat text config
# --------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type if isinstance(f.type, str) else f.type.__name__
                for f in fields(ExperimentConfig)}
_TUPLE_ITEM = {"active_domains": int, "seeds": int, "sweep_values": float}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidInputError(f"not a boolean: {text!r}")


def parse_value(key, text):
    """Convert the text of config ``key`` to its field type."""
    if key not in _FIELD_TYPES:
        raise InvalidInputError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "tuple":
            item = _TUPLE_ITEM[key]
            return tuple(item(x) for x in text.replace(",", " ").split())
        if kind == "bool":
            return _parse_bool(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise InvalidInputError(f"bad value for {key}: {text!r}") from exc
    return text


def parse_config(text, base=None):
    """Parse ``key = value`` lines (``#`` starts a comment) over ``base``.

    Unknown keys are errors.  A ``preset = name`` line, if present, must come
    first and selects the starting point.
    """
    changes = {}
    cfg = base or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidInputError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key == "preset":
            if changes:
                raise InvalidInputError(f"line {lineno}: preset must come first")
            cfg = preset(value.strip())
            continue
        changes[key] = parse_value(key, value)
    if "K_active" in changes and "active_domains" not in changes:
        changes["active_domains"] = ()
    return replace(cfg, **changes)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)


def format_config(cfg):
    """Inverse of :func:`parse_config`."""
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------


def _presets():
    base = ExperimentConfig()
    complex_family = dict(K_total=10, family="oscillating", T=200, active_domains=())
    return {
        "table2": base,
        "table3_scheme1": replace(base, sweep_axis="noise_sigma",
                                  sweep_values=(0.01, 0.05, 0.1, 0.2, 0.5)),
        "table3_scheme2": replace(base, sweep_axis="perturbation_norm",
                                  sweep_values=(0.1, 0.2, 0.3, 0.5, 0.7)),
        "table5": replace(base, **complex_family, K_active=3, sweep_axis="K_active",
                          sweep_values=(2, 3, 4, 5, 6, 7)),
        "table7": replace(base, **complex_family, K_active=3, sweep_axis="K_active",
                          sweep_values=(2, 3, 4, 5, 6, 7, 8, 9)),
        "table9": replace(base, K_active=5, active_domains=(), family="oscillating", T=200, n_probe=50,
                          sweep_axis="window", sweep_values=(0, 3, 5, 7, 10)),
        "fig4": replace(base, sweep_axis="noise_sigma",
                        sweep_values=(0.01, 0.05, 0.1, 0.2, 0.5)),
        "ks_violation": replace(base, K_total=3, active_domains=(0, 1, 2), violation=True),
    }


PRESETS = _presets()


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --------------------------------------------------------------------------
# Single runs
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunOutput:
    """Everything one run produces.  Unpacks as ``(scores, diagnostics, recovery)``."""

    scores: ScoreCard
    diagnostics: DiagnosticsReport
    recovery: object
    truth: np.ndarray
    basis: object
    bound: object
    seed: int
    extras: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.scores, self.diagnostics, self.recovery))


def build_world(cfg, seed):
    """Mechanisms, schedule, encoder and sampler for one seed."""
    active = cfg.resolved_active()
    ms = build_mechanism_set(cfg.d, cfg.K_total, cfg.perturbation_norm, seed,
                             activation_slope=cfg.activation_slope,
                             allow_over_capacity=cfg.K_total > cfg.d + 1)
    injection = None
    if cfg.violation:
        injection = EdgeInjection(weight=cfg.edge_weight)
        schedule = make_schedule("sequential", cfg.T, cfg.K_total, active_domains=(0, 1, 2))
    else:
        schedule = make_schedule(cfg.family, cfg.T, cfg.K_total, active_domains=active)
    if cfg.encoder == "oracle":
        encoder = EncoderSim("oracle", make_mixing_map(cfg.d, cfg.obs_dim, cfg.mixing_depth, seed),
                             seed=seed)
    else:
        dist = random_distortion(cfg.d, cfg.distortion_seed + seed,
                                 noise_sigma=cfg.representation_noise)
        encoder = EncoderSim("distorted", distortion=dist, seed=seed)
    sampler = ConditionalSampler(ms, cfg.noise_sigma, seed, encoder, cfg.n_contexts,
                                 cfg.context_mean, injection, cfg.moment_match)
    return ms, schedule, sampler


def _subsample(x, n, rng):
    x = np.asarray(x).ravel()
    if x.size <= n:
        return x
    return x[rng.choice(x.size, size=n, replace=False)]


def run_single(cfg, seed=None, write=True):
    """One end-to-end run; returns a :class:`RunOutput`."""
    seed = cfg.seeds[0] if seed is None else seed
    try:
        return _run_single(cfg, seed, write)
    except MechmixError as exc:
        raise type(exc)(f"{exc} [run seed={seed}, K_active={len(cfg.resolved_active())}, "
                        f"noise_sigma={cfg.noise_sigma}, "
                        f"perturbation_norm={cfg.perturbation_norm}]") from exc


def _run_single(cfg, seed, write):
    ms, schedule, sampler = build_world(cfg, seed)
    active = schedule.active_domains if cfg.violation else cfg.resolved_active()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BasisWarning)
        basis = sampler.basis(active)
    truth = schedule.alphas
    truth_local = basis.local(truth)

    enc, lat = sampler.probe(truth, cfg.n_probe, key="transition", mode=cfg.probe_mode,
                             return_latents=True)
    zhat = enc.mean(axis=1)
    result = smooth(zhat, basis, cfg.smoothing_config())
    if cfg.calibrate:
        result = calibrate_two_point(result, truth_local[0], truth_local[-1])

    est = result.to_global(result.smoothed_alphas, cfg.K_total)
    best = result.to_global(result.best_alphas, cfg.K_total)
    pure_enc, pure_lat = sampler.probe(np.eye(cfg.K_total)[list(active)], cfg.ks_samples,
                                       key="validation", return_latents=True)
    latent_mcc, perm = mcc(pure_enc[0], pure_lat[0])
    scores = ScoreCard(
        mcc=latent_mcc,
        weight_corr=weight_correlation(est, truth, active),
        mae_raw=mae(est[:, list(active)], truth[:, list(active)]),
        mae_cal=(mae(best[:, list(active)], truth[:, list(active)])
                 if cfg.calibrate else float("nan")),
        w_traj_corr=w_trajectory_correlation(ms, best, truth),
        assignment=tuple(int(p) for p in perm),
        component_corr=tuple(per_component_correlation(est, truth, active)),
    )

    delta = estimate_delta_approx(sampler, basis)
    eps_hat = zhat - sampler.mean(truth)
    bound = check_pointwise_bound(result, truth_local, basis, delta, eps_hat)

    rng = rng_stream(seed, "ks-subsample")
    m = basis.num_domains
    vertex_means = basis.predict(np.eye(m))
    r_pure = np.linalg.norm(pure_enc - vertex_means[:, None, :], axis=2)
    fitted = basis.predict(result.smoothed_alphas)
    r_trans = np.linalg.norm(enc - fitted[:, None, :], axis=2)
    check = verify_assumption(_subsample(r_pure, cfg.ks_samples, rng),
                              _subsample(r_trans, cfg.ks_samples, rng))

    raw_res = residual_norms(zhat, basis, result.raw_shift)
    diag = DiagnosticsReport(
        sigma_min=basis.sigma_min,
        mean_residual=float(raw_res.mean()),
        delta_approx=delta,
        bound_violations=bound.violations,
        bound_fraction=bound.fraction_satisfied,
        ks_statistic=check.ks_statistic,
        ks_p_value=check.ks_p_value,
        verdict=check.verdict,
        warnings=result.warnings,
    )
    out = RunOutput(scores, diag, result, truth, basis, bound, seed,
                    extras={"eps_norms": np.linalg.norm(eps_hat, axis=1), "mechanisms": ms})
    if write and cfg.output:
        write_run(out, cfg, cfg.output)
    return out


def scores_row(out):
    row = {"seed": out.seed}
    row.update(out.scores.as_dict())
    row.update(out.diagnostics.as_dict())
    return row


def write_run(out, cfg, prefix):
    """Write ``<prefix>_recovery.csv``, ``_diagnostics.txt``, ``_scores.csv`` and metadata."""
    out.recovery.write_csv(f"{prefix}_recovery.csv")
    with open(f"{prefix}_diagnostics.txt", "w") as fh:
        fh.write(out.diagnostics.to_text())
    row = scores_row(out)
    _write_rows(f"{prefix}_scores.csv", [row], _config_columns(cfg))
    out.basis.save(f"{prefix}_basis.txt")
    write_metadata(f"{prefix}_scores.csv.meta", {"config": format_config(cfg).replace("\n", "; ")})


def _config_columns(cfg):
    return {"d": cfg.d, "K_total": cfg.K_total, "K_active": len(cfg.resolved_active()),
            "T": cfg.T, "family": cfg.family, "noise_sigma": cfg.noise_sigma,
            "perturbation_norm": cfg.perturbation_norm, "encoder": cfg.encoder,
            "smoothing": cfg.smoothing, "window": cfg.window}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path, rows, prefix_cols=None):
    prefix_cols = prefix_cols or {}
    keys = list(prefix_cols) + [k for k in rows[0] if k not in prefix_cols]
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            merged = dict(prefix_cols, **row)
            fh.write(",".join(_fmt(merged[k]) for k in keys) + "\n")


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

SWEEP_METRICS = ("mcc", "weight_corr", "mae_raw", "mae_cal", "w_traj_corr", "snr_eff",
                 "sigma_min", "mean_residual", "delta_approx", "bound_violations",
                 "ks_p_value")


@dataclass(frozen=True, eq=False)
class SweepResult:
    axis: str
    values: tuple
    runs: list
    summary: list

    def column(self, metric, stat="mean"):
        return np.array([row[f"{metric}_{stat}"] for row in self.summary])

    def write(self, path):
        """Summary CSV at ``path``; per-run rows next to it with ``.runs.csv``."""
        _write_rows(path, self.summary)
        runs_path = path[:-4] + ".runs.csv" if path.endswith(".csv") else path + ".runs.csv"
        _write_rows(runs_path, self.runs)


def _coerce_axis_value(axis, value):
    kind = _FIELD_TYPES[axis]
    if kind == "int":
        return int(round(float(value)))
    if kind == "float":
        return float(value)
    if kind == "bool":
        return _parse_bool(value) if isinstance(value, str) else bool(value)
    raise InvalidInputError(f"axis {axis!r} is not a numeric field")


def summarize(runs, axis, values):
    """Mean and sample standard deviation of every metric per axis value."""
    summary = []
    for v in values:
        rows = [r for r in runs if r[axis] == v]
        agg = {axis: v, "n_runs": len(rows)}
        for m in SWEEP_METRICS:
            x = np.array([r[m] for r in rows], dtype=float)
            agg[f"{m}_mean"] = float(np.mean(x))
            agg[f"{m}_sd"] = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
        summary.append(agg)
    return summary


def _sweep_row(args):
    axis, v, run_cfg, seed = args
    row = {axis: v}
    row.update(scores_row(run_single(run_cfg, seed, write=False)))
    return row


def run_sweep(cfg, axis=None, values=None, path=None, jobs=1):
    """``run_single`` for every ``(value, seed)``; aggregated per value.

    ``jobs > 1`` spreads runs over worker processes.  Runs are independent
    and rows come back in ``(value, seed)`` order, so output does not depend
    on ``jobs``.
    """
    axis = axis or cfg.sweep_axis
    if axis not in _FIELD_TYPES or axis in ("seeds", "output", "sweep_axis", "sweep_values"):
        raise InvalidInputError(f"unknown sweep axis {axis!r}")
    values = tuple(cfg.sweep_values if values is None else values)
    if not values:
        raise InvalidInputError("sweep needs at least one value")
    values = tuple(_coerce_axis_value(axis, v) for v in values)
    tasks = [(axis, v, cfg.replace(**{axis: v, "output": ""}), seed)
             for v in values for seed in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_sweep_row, tasks))
    else:
        runs = [_sweep_row(t) for t in tasks]
    result = SweepResult(axis, values, runs, summarize(runs, axis, values))
    if path:
        result.write(path)
    return result


def config_dict(cfg):
    return dataclasses.asdict(cfg)
