"""Config-driven experiment runner: builds transports, runs replicate
estimates, and writes deterministic CSV / YAML outputs with provenance."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .basis import UnivariateBasis, truncated_normal_reference, uniform_reference
from .config import ConfigError, ExperimentConfig, config_hash
from .cross_entropy import cross_entropy_estimate, cross_entropy_ratio_estimate
from .dirt import DIRT, build_dirt
from .estimators import (
    CouplingSpec,
    EstimatorReport,
    dis_estimate,
    hellinger_estimate,
    ratio_estimate,
)
from .problems.annulus import AnnulusProblem
from .problems.gauss_toy import GaussianConjugateToy
from .problems.ode import OdeOptions
from .problems.priors import BoxPrior
from .problems.sir import (
    SirProblem,
    SirWorkingModel,
    read_data_csv,
    sir_generate_data,
    sir_log_likelihood,
    sir_response,
)
from .rare_event import (
    FailureEvent,
    SmoothingParams,
    posterior_denominator_bridging,
    posterior_numerator_bridging,
    tempering_ladder,
)
from .serialize import load_dirt, save_dirt

__all__ = [
    "ProblemBundle",
    "make_bundle",
    "run_build",
    "run_estimate",
    "run_experiment",
    "run_scaling",
    "run_diagnose",
    "derive_seed",
]

_SEED_TAGS = {"build_p": 1, "build_q": 2, "data": 3, "ce": 4, "diagnose": 5}


def derive_seed(seed: int, tag) -> int:
    """Deterministic sub-seed from the run seed and a tag (name or index)."""
    tag_int = _SEED_TAGS[tag] if isinstance(tag, str) else 1000 + int(tag)
    return int(np.random.SeedSequence([int(seed), tag_int]).generate_state(1)[0])


@dataclass
class ProblemBundle:
    """Everything the runner needs about a configured problem."""

    kind: str
    dim: int
    bases: list
    references: list
    schedule_p: object
    schedule_q: object | None
    log_rho_star: object  # exact unnormalized target for the (numerator) DIS weights
    truth: float | None
    log_f: object | None = None
    log_likelihood: object | None = None
    log_prior: object | None = None
    ce_runner: object | None = None

    @property
    def is_posterior(self) -> bool:
        return self.schedule_q is not None


def _grid(config: ExperimentConfig, lo: float, hi: float):
    n = config.cross.grid_size
    return [UnivariateBasis.uniform(lo, hi, n)]


def make_bundle(config: ExperimentConfig) -> ProblemBundle:
    kind = config.problem.kind
    if kind in ("disk", "annulus"):
        return _annulus_bundle(config)
    if kind == "toy_gaussian":
        return _toy_bundle(config)
    if kind == "sir":
        return _sir_bundle(config)
    raise ConfigError(f"unhandled problem kind {kind!r}")


def _annulus_bundle(config: ExperimentConfig) -> ProblemBundle:
    pc = config.problem
    problem = AnnulusProblem(
        r_outer=float(np.sqrt(pc.r_outer_sq)),
        r_inner=float(np.sqrt(pc.r_inner_sq)),
        center=pc.center,
    )
    bases = _grid(config, 0.0, 1.0) * 2
    refs = [uniform_reference(0.0, 1.0)] * 2
    smoothing = SmoothingParams.geometric(
        config.schedule.gamma_init, config.schedule.gamma_star, config.schedule.gamma_factor
    )
    schedule = problem.bridging(smoothing)

    if pc.r_inner_sq > 0.0:
        event = FailureEvent(problem.radius_sq, "interval", lower=pc.r_inner_sq, upper=pc.r_outer_sq)
    else:
        event = FailureEvent(problem.radius_sq, "leq", upper=pc.r_outer_sq)

    def log_prior(x):
        x = np.atleast_2d(x)
        inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
        return np.where(inside, 0.0, -np.inf)

    def ce_runner(seed: int) -> EstimatorReport:
        return cross_entropy_estimate(
            event,
            log_prior,
            lambda rng, n: rng.uniform(0.0, 1.0, size=(n, 2)),
            2,
            n_components=config.estimator.ce_components,
            n_per_iter=config.estimator.ce_n_per_iter,
            seed=seed,
        )

    return ProblemBundle(
        kind=config.problem.kind,
        dim=2,
        bases=bases,
        references=refs,
        schedule_p=schedule,
        schedule_q=None,
        log_rho_star=problem.log_indicator,
        truth=problem.exact_probability,
        ce_runner=ce_runner,
    )


def _toy_bundle(config: ExperimentConfig) -> ProblemBundle:
    pc = config.problem
    half = config.cross.half_width
    toy = GaussianConjugateToy(
        y_obs=pc.y_obs, sigma=pc.sigma, half_width=half, threshold=pc.threshold
    )
    bases = _grid(config, -half, half)
    refs = [toy.reference]
    alphas = tempering_ladder(config.schedule.alpha_init, config.schedule.alpha_factor)
    event = FailureEvent(toy.response, "geq", lower=pc.threshold)
    smoothing = SmoothingParams(config.schedule.gamma_star)
    schedule_q = posterior_denominator_bridging(toy.log_likelihood, toy.log_prior, alphas)
    schedule_p = posterior_numerator_bridging(
        event, toy.log_likelihood, toy.log_prior, alphas, smoothing
    )

    def log_rho_star(x):
        return toy.log_indicator(x) + toy.log_likelihood(x) + toy.log_prior(x)

    return ProblemBundle(
        kind="toy_gaussian",
        dim=1,
        bases=bases,
        references=refs,
        schedule_p=schedule_p,
        schedule_q=schedule_q,
        log_rho_star=log_rho_star,
        truth=toy.posterior_tail,
        log_f=toy.log_indicator,
        log_likelihood=toy.log_likelihood,
        log_prior=toy.log_prior,
    )


class _SirDirectModel:
    """Original-coordinate SIR evaluators sharing one solve per batch (CE)."""

    def __init__(self, problem: SirProblem, data, prior: BoxPrior):
        self.problem = problem
        self.data = np.asarray(data, dtype=float)
        self.prior = prior
        self._cache: dict[bytes, tuple] = {}

    def _solve(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            clipped = np.clip(x, self.prior.lower, self.prior.upper)
            hit = sir_response(self.problem, clipped)
            if len(self._cache) >= 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit

    def response(self, x):
        return self._solve(x)[1]

    def log_likelihood(self, x):
        obs_i, _ = self._solve(x)
        resid = (obs_i - self.data[None]) / self.problem.noise_std
        return -0.5 * np.einsum("mkt,mkt->m", resid, resid)


def _sir_bundle(config: ExperimentConfig) -> ProblemBundle:
    pc = config.problem
    ode = OdeOptions(rtol=pc.ode_tol, atol=pc.ode_tol)
    if pc.adjacency_file:
        from .problems.sir import read_adjacency_file

        adjacency = read_adjacency_file(pc.adjacency_file)
        k = len(adjacency)
        s0 = np.full(k, 100.0)
        i0 = np.zeros(k)
        s0[0], i0[0] = 99.0, 1.0
        problem = SirProblem(
            adjacency=adjacency, s0=s0, i0=i0, r0=np.zeros(k), i_max=pc.i_max, ode=ode
        )
    else:
        problem = SirProblem.lattice(pc.compartments, i_max=pc.i_max, ode=ode)

    if pc.data_file:
        data = read_data_csv(pc.data_file)
        if data.shape != (problem.n_compartments, problem.obs_times.size):
            raise ConfigError("data file shape mismatches the problem")
    else:
        data = sir_generate_data(problem, problem.true_rates(), seed=pc.data_seed)

    half = config.cross.half_width
    refs = [truncated_normal_reference(half)] * problem.dim
    bases = [UnivariateBasis.uniform(-half, half, config.cross.grid_size)] * problem.dim
    prior = BoxPrior.cube(pc.prior_lower, pc.prior_upper, problem.dim)
    model = SirWorkingModel(problem, data, refs, prior, options=ode)
    event = FailureEvent(model.response, "geq", lower=problem.i_max)

    alphas = tempering_ladder(config.schedule.alpha_init, config.schedule.alpha_factor)
    smoothing = SmoothingParams(config.schedule.gamma_star)
    schedule_q = posterior_denominator_bridging(model.log_likelihood, model.log_prior, alphas)
    schedule_p = posterior_numerator_bridging(
        event, model.log_likelihood, model.log_prior, alphas, smoothing
    )

    def log_rho_star(u):
        return model.log_indicator(u) + model.log_likelihood(u) + model.log_prior(u)

    direct = _SirDirectModel(problem, data, prior)
    ce_event = FailureEvent(direct.response, "geq", lower=problem.i_max)

    def ce_runner(seed: int) -> EstimatorReport:
        return cross_entropy_ratio_estimate(
            ce_event,
            prior.log_pdf,
            prior.sample,
            problem.dim,
            direct.log_likelihood,
            n_components=config.estimator.ce_components,
            n_per_iter=config.estimator.ce_n_per_iter,
            seed=seed,
        )

    return ProblemBundle(
        kind="sir",
        dim=problem.dim,
        bases=bases,
        references=refs,
        schedule_p=schedule_p,
        schedule_q=schedule_q,
        log_rho_star=log_rho_star,
        truth=None,
        log_f=model.log_indicator,
        log_likelihood=model.log_likelihood,
        log_prior=model.log_prior,
        ce_runner=ce_runner,
    )


# -- output helpers ------------------------------------------------------------


def _provenance(config: ExperimentConfig) -> dict:
    return {
        "library": "deepis",
        "version": __version__,
        "config_hash": config_hash(config),
        "seed": int(config.estimator.seed),
    }


def _write_yaml_documents(path: Path, documents: list[dict]) -> None:
    text = yaml.safe_dump_all(documents, sort_keys=True)
    path.write_text(text)


def _write_csv(path: Path, header_comments: list[str], fieldnames: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    path.write_text(buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _csv_comments(config: ExperimentConfig) -> list[str]:
    p = _provenance(config)
    return [f"deepis {p['version']}", f"config_hash={p['config_hash']}", f"seed={p['seed']}"]


# -- runner operations -----------------------------------------------------------


def run_build(config: ExperimentConfig, out_dir) -> dict:
    """Build the transport(s) for the configured problem and serialize them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = make_bundle(config)
    opts = config.cross.cross_options()
    seed = config.estimator.seed

    result = {"provenance": _provenance(config), "paths": {}, "builds": {}}
    dirt_p = build_dirt(
        bundle.schedule_p, bundle.bases, bundle.references, opts, seed=derive_seed(seed, "build_p")
    )
    path_p = out / "dirt_p.dirt"
    save_dirt(path_p, dirt_p)
    result["paths"]["dirt_p"] = str(path_p)
    result["builds"]["dirt_p"] = dirt_p.provenance
    if bundle.schedule_q is not None:
        dirt_q = build_dirt(
            bundle.schedule_q, bundle.bases, bundle.references, opts, seed=derive_seed(seed, "build_q")
        )
        path_q = out / "dirt_q.dirt"
        save_dirt(path_q, dirt_q)
        result["paths"]["dirt_q"] = str(path_q)
        result["builds"]["dirt_q"] = dirt_q.provenance
    _write_yaml_documents(out / "build_log.yaml", [result["provenance"], result["builds"]])
    return result


def _replicate_report(config, bundle, dirt_p, dirt_q, rep_index) -> EstimatorReport:
    est = config.estimator
    seed_i = derive_seed(est.seed, rep_index)
    if bundle.is_posterior:
        rep = ratio_estimate(
            dirt_p,
            dirt_q,
            bundle.log_f,
            bundle.log_likelihood,
            bundle.log_prior,
            est.n_samples,
            coupling=CouplingSpec(est.coupling_a),
            seed=seed_i,
        )
        if est.hellinger:
            hell = hellinger_estimate(dirt_p, bundle.log_rho_star, est.n_samples, seed=seed_i)
            rep.d_hell = hell.value
        return rep
    return dis_estimate(
        dirt_p, bundle.log_rho_star, est.n_samples, seed=seed_i, compute_hellinger=est.hellinger
    )


def run_estimate(config: ExperimentConfig, dirt_paths: dict, out_dir, threads: int = 1) -> dict:
    """Replicate estimation against stored transports; writes records and a
    summary table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = make_bundle(config)
    dirt_p = load_dirt(dirt_paths["dirt_p"])
    dirt_q = load_dirt(dirt_paths["dirt_q"]) if "dirt_q" in dirt_paths else None
    if bundle.is_posterior and dirt_q is None:
        raise ConfigError("posterior problem needs both dirt_p and dirt_q")

    n_reps = config.estimator.replicates
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(
                pool.map(lambda i: _replicate_report(config, bundle, dirt_p, dirt_q, i), range(n_reps))
            )
    else:
        reports = [_replicate_report(config, bundle, dirt_p, dirt_q, i) for i in range(n_reps)]

    records = [rep.to_record() for rep in reports]
    _write_yaml_documents(out / "replicates.yaml", [_provenance(config)] + records)

    summary = summarize(config, bundle, dirt_p, dirt_q, reports)
    if config.estimator.compare_cross_entropy and bundle.ce_runner is not None:
        ce = bundle.ce_runner(derive_seed(config.estimator.seed, "ce"))
        summary["ce_estimate"] = float(ce.estimate)
        summary["ce_rel_std"] = float(ce.rel_std)
        summary["ce_n_evals"] = int(ce.n_evals)
    _write_csv(
        out / "summary.csv",
        _csv_comments(config),
        list(summary.keys()),
        [summary],
    )
    return {"reports": reports, "summary": summary, "records": records}


def summarize(config, bundle, dirt_p, dirt_q, reports) -> dict:
    estimates = np.array([r.estimate for r in reports])
    d_hells = np.array([r.d_hell for r in reports if r.d_hell is not None])
    summary = {
        "problem": bundle.kind,
        "estimate_mean": float(np.mean(estimates)),
        "estimate_std": float(np.std(estimates, ddof=1)) if len(estimates) > 1 else 0.0,
        "rel_std_mean": float(np.mean([r.rel_std for r in reports])),
        "ess_mean": float(np.mean([r.ess for r in reports])),
        "d_hell_mean": float(np.mean(d_hells)) if d_hells.size else float("nan"),
        "d_hell_std": float(np.std(d_hells, ddof=1)) if d_hells.size > 1 else 0.0,
        "n_samples": int(config.estimator.n_samples),
        "replicates": int(len(reports)),
        "n_build_evals": int(
            dirt_p.n_build_evals + (dirt_q.n_build_evals if dirt_q is not None else 0)
        ),
        "layers": int(dirt_p.n_layers),
        "seed": int(config.estimator.seed),
    }
    if bundle.truth is not None:
        rel_err = np.abs(estimates - bundle.truth) / bundle.truth
        summary["truth"] = float(bundle.truth)
        summary["rel_bias_mean"] = float(np.mean(rel_err))
        summary["rel_bias_std"] = float(np.std(rel_err, ddof=1)) if len(rel_err) > 1 else 0.0
    return summary


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    out = Path(out_dir)
    built = run_build(config, out)
    result = run_estimate(config, built["paths"], out, threads=threads)
    result["paths"] = built["paths"]
    return result


_SWEEPABLE = {
    "dimension": ("problem", "compartments", int),
    "rank": ("cross", "max_rank", int),
    "gamma_star": ("schedule", "gamma_star", float),
    "n_samples": ("estimator", "n_samples", int),
}


def _override(config: ExperimentConfig, variable: str, value) -> ExperimentConfig:
    from dataclasses import asdict

    from .config import parse_config

    if variable not in _SWEEPABLE:
        raise ConfigError(f"unknown sweep variable {variable!r}; pick one of {sorted(_SWEEPABLE)}")
    section, key, cast = _SWEEPABLE[variable]
    data = config.to_dict()
    data[section][key] = cast(value)
    return parse_config(data)


def run_scaling(config: ExperimentConfig, variable: str, values, out_dir, threads: int = 1) -> list[dict]:
    """Sweep one control variable, rerunning the experiment per value."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        sub = _override(config, variable, value)
        res = run_experiment(sub, out / f"{variable}_{value}", threads=threads)
        row = {"variable": variable, "value": value}
        row.update(res["summary"])
        rows.append(row)
    fieldnames = list(rows[0].keys())
    _write_csv(out / "scaling.csv", _csv_comments(config), fieldnames, rows)
    return rows


def run_diagnose(config: ExperimentConfig, dirt_paths: dict, out_dir) -> dict:
    """Hellinger and ESS diagnostics of stored transports against the target."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = make_bundle(config)
    seed = derive_seed(config.estimator.seed, "diagnose")
    n = config.estimator.n_samples
    result = {"provenance": _provenance(config)}
    dirt_p = load_dirt(dirt_paths["dirt_p"])
    hell = hellinger_estimate(dirt_p, bundle.log_rho_star, n, seed=seed)
    result["dirt_p"] = {
        "d_hell": float(hell.value),
        "d_hell_se": float(hell.std_error),
        "ess": float(hell.ess),
        "n": int(n),
    }
    if "dirt_q" in dirt_paths and bundle.is_posterior:
        dirt_q = load_dirt(dirt_paths["dirt_q"])

        def log_post(x):
            return bundle.log_likelihood(x) + bundle.log_prior(x)

        hell_q = hellinger_estimate(dirt_q, log_post, n, seed=seed + 1)
        result["dirt_q"] = {
            "d_hell": float(hell_q.value),
            "d_hell_se": float(hell_q.std_error),
            "ess": float(hell_q.ess),
            "n": int(n),
        }
    _write_yaml_documents(out / "diagnostics.yaml", [result])
    return result
