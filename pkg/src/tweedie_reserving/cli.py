"""Command-line front end for reproducible batch runs.

Commands::

    tweedie-reserve fit      --triangle X.csv [--model M0] [--p-fixed 1]
    tweedie-reserve sample   --triangle X.csv --seed S [-T N] [--burn-in B]
    tweedie-reserve select   --triangle X.csv --seed S [--models M0,M6]
    tweedie-reserve reserve  --triangle X.csv --seed S [--p-grid 1.1:1.9:0.1]

Every command is a pure function of its input files, flags and seed;
numeric output is serialized with 17 significant digits so re-runs
reproduce files byte for byte.  Flags override a plain ``key=value``
config file, which overrides defaults.

Exit codes: 0 success, 2 input error, 3 missing artifact, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mcmc import (DEFAULT_BURN_IN, DEFAULT_ITERATIONS, Chain,
                   ProposalScales, pretune, read_chain_csv, run_chain,
                   summarize, write_chain_csv)
from .mle import (DISPERSION_PEARSON, MleFit, MsepReport, OptimizerSettings,
                  fit_boundary, fit_mle, reserve_mle)
from .model import MODEL_NAMES, ModelSpec, PriorBox, model_spec
from .model_choice import (ModelComparison, chain_log_likelihoods,
                           comparison_csv, congdon_probabilities, dic,
                           lhr_pvalue)
from .reserving import (bayesian_decomposition, conditional_on_p,
                        histogram_data, predictive_outstanding)
from .triangle import Triangle, TriangleParseError, load_triangle

__all__ = ["main", "RunConfig"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def _json_value(v, indent: int) -> str:
    pad = " " * indent
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt17(v) if np.isfinite(v) else "null"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, (list, tuple)):
        inner = ", ".join(_json_value(x, indent) for x in v)
        return "[" + inner + "]"
    if isinstance(v, dict):
        items = [f'{pad}  "{k}": {_json_value(val, indent + 2)}'
                 for k, val in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(v)}")


def dump_json(obj: dict, path: Path) -> None:
    """Deterministic JSON with 17-significant-digit floats."""
    path.write_text(_json_value(obj, 0) + "\n", encoding="utf-8")


@dataclass
class RunConfig:
    """Merged command configuration (flags > config file > defaults)."""

    triangle_path: str
    model: str = "M0"
    iterations: int = DEFAULT_ITERATIONS
    burn_in: int = DEFAULT_BURN_IN
    seed: int | None = None
    p_fixed: float | None = None
    p_grid: str | None = None
    out: str | None = None
    models: str | None = None
    chains_dir: str | None = None
    threads: int = 1
    predict: bool = False
    do_pretune: bool = False
    prior_p: str | None = None
    prior_phi: str | None = None
    prior_alpha: str | None = None
    prior_beta: str | None = None
    max_evals: int = 100_000
    restarts: int = 3

    def box(self) -> PriorBox:
        kw = {}
        for name, key in (("p_range", "prior_p"), ("phi_range", "prior_phi"),
                          ("alpha_range", "prior_alpha"),
                          ("beta_range", "prior_beta")):
            raw = getattr(self, key)
            if raw is not None:
                lo, hi = (float(v) for v in raw.split(":"))
                kw[name] = (lo, hi)
        return PriorBox(**kw)

    def optimizer(self) -> OptimizerSettings:
        return OptimizerSettings(max_evals=self.max_evals,
                                 restarts=self.restarts)

    def grid_values(self) -> list[float]:
        if self.p_grid is None:
            return []
        parts = self.p_grid.split(":")
        if len(parts) != 3:
            raise ValueError("p-grid must be start:stop:step")
        start, stop, step = (float(v) for v in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"bad p-grid {self.p_grid!r}")
        n = int(round((stop - start) / step)) + 1
        vals = [round(start + k * step, 12) for k in range(n)]
        return [v for v in vals if v <= stop + 1e-12]


def _read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not key=value: {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


_INT_KEYS = {"iterations", "burn_in", "seed", "threads", "max_evals",
             "restarts"}
_FLOAT_KEYS = {"p_fixed"}
_BOOL_KEYS = {"predict", "do_pretune"}


def _merge_config(args: argparse.Namespace) -> RunConfig:
    file_cfg: dict[str, str] = {}
    if args.config:
        file_cfg = _read_config_file(args.config)
    merged: dict = {}
    for f in RunConfig.__dataclass_fields__:
        flag_val = getattr(args, f, None)
        if flag_val is not None:
            merged[f] = flag_val
        elif f in file_cfg:
            raw = file_cfg[f]
            if f in _INT_KEYS:
                merged[f] = int(raw)
            elif f in _FLOAT_KEYS:
                merged[f] = float(raw)
            elif f in _BOOL_KEYS:
                merged[f] = raw.lower() in ("1", "true", "yes")
            else:
                merged[f] = raw
    if "triangle_path" not in merged:
        raise ValueError("--triangle is required")
    return RunConfig(**merged)


def _out_dir(cfg: RunConfig, command: str) -> Path:
    if cfg.out:
        path = Path(cfg.out)
    else:
        stamp = time.strftime("%Y%m%dT%H%M%S")
        path = Path(f"{command}-{stamp}")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_triangle(cfg: RunConfig) -> Triangle:
    return load_triangle(cfg.triangle_path)


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ValueError("--seed is required for sampling commands")
    return cfg.seed


def _fit_json(fit: MleFit, report: MsepReport) -> dict:
    cov = (None if fit.covariance is None
           else [list(row) for row in fit.covariance])
    return {
        "p": fit.params.p,
        "phi": fit.params.phi,
        "alpha": list(fit.params.alpha),
        "beta": list(fit.params.beta),
        "covariance": cov,
        "log_likelihood": fit.log_lik,
        "reserve": report.reserve,
        "pv": report.process_variance,
        "ee": report.estimation_error,
        "msep": report.msep,
        "dispersion_source": report.dispersion_source,
    }


def _auto_scales(t: Triangle, spec: ModelSpec, box: PriorBox, fit: MleFit,
                 seed: int, p_fixed: float | None = None,
                 tune: bool = True) -> ProposalScales:
    """Scales from the fit's parameter spread, optionally batch-tuned."""
    sd = fit.stdev()
    initial = None
    if sd is not None and np.all(np.isfinite(sd)) and np.all(sd >= 0):
        sigma = np.maximum(2.4 * sd, 1e-3)
        initial = ProposalScales(sigma=sigma)
    if not tune and initial is not None:
        return initial
    rng = np.random.default_rng(seed)
    return pretune(t, spec, box, fit.params, rng, initial_scales=initial,
                   p_fixed=p_fixed)


def _hist_csv(path: Path, draws: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_left,bin_right,count\n")
        for left, right, count in histogram_data(draws):
            fh.write(f"{fmt17(left)},{fmt17(right)},{count}\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fit(cfg: RunConfig) -> int:
    t = _load_triangle(cfg)
    out = _out_dir(cfg, "fit")
    box = cfg.box()
    spec = model_spec(cfg.model, t.I)
    if cfg.p_fixed is not None and cfg.p_fixed in (1.0, 2.0):
        if cfg.model != "M0":
            raise ValueError("boundary fits are defined for the saturated "
                             "model only")
        fit, report = fit_boundary(t, int(cfg.p_fixed))
    else:
        fit = fit_mle(t, spec, box, cfg.optimizer(), p_fixed=cfg.p_fixed)
        if not fit.converged:
            print("fit did not converge within the evaluation budget",
                  file=sys.stderr)
            return EXIT_NUMERICAL
        report = reserve_mle(fit)
    dump_json(_fit_json(fit, report), out / "fit.json")
    print(out / "fit.json")
    return EXIT_OK


def cmd_sample(cfg: RunConfig) -> int:
    t = _load_triangle(cfg)
    seed = _require_seed(cfg)
    out = _out_dir(cfg, "sample")
    box = cfg.box()
    spec = model_spec(cfg.model, t.I)
    fit = fit_mle(t, spec, box, cfg.optimizer(), p_fixed=cfg.p_fixed)
    scales = _auto_scales(t, spec, box, fit, seed + 1, cfg.p_fixed,
                          tune=cfg.do_pretune)
    chain = run_chain(t, spec, box, scales, T=cfg.iterations,
                      T_b=cfg.burn_in, seed=seed, init=fit.params,
                      p_fixed=cfg.p_fixed)
    write_chain_csv(chain, out / "chain.csv")
    with open(out / "loglik.csv", "w", encoding="utf-8") as fh:
        fh.write("iter,log_likelihood\n")
        for k, v in enumerate(chain.loglik):
            fh.write(f"{k},{fmt17(v)}\n")
    summary = summarize(chain)
    doc = summary.to_json_dict()
    doc["acceptance_rates"] = {
        name: float(rate) for name, rate in
        zip(spec.free_names, chain.acceptance_rates())}
    if cfg.do_pretune:
        doc["proposal_scales"] = {
            name: float(s) for name, s in zip(spec.free_names, scales.sigma)}
    dump_json(doc, out / "summary.json")
    print(out / "summary.json")
    return EXIT_OK


def _chains_for_models(cfg: RunConfig, t: Triangle, box: PriorBox,
                       names: list[str], seed: int
                       ) -> tuple[dict[str, Chain], dict[str, MleFit]]:
    fits = {}
    scale_map = {}
    for name in names:
        spec = model_spec(name, t.I)
        fit = fit_mle(t, spec, box, cfg.optimizer())
        fits[name] = fit
        scale_map[name] = _auto_scales(t, spec, box, fit,
                                       seed + 17 * (1 + names.index(name)))
    def run_one(name: str) -> Chain:
        spec = fits[name].spec
        return run_chain(t, spec, box, scale_map[name], T=cfg.iterations,
                         T_b=cfg.burn_in, seed=seed + names.index(name),
                         init=fits[name].params)
    chains: dict[str, Chain] = {}
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for name, chain in zip(names, pool.map(run_one, names)):
                chains[name] = chain
    else:
        for name in names:
            chains[name] = run_one(name)
    return chains, fits


def cmd_select(cfg: RunConfig) -> int:
    t = _load_triangle(cfg)
    out = _out_dir(cfg, "select")
    box = cfg.box()
    names = list(MODEL_NAMES) if cfg.models is None else [
        m.strip() for m in cfg.models.split(",") if m.strip()]
    for m in names:
        if m not in MODEL_NAMES:
            raise ValueError(f"unknown model {m!r}")
    if cfg.chains_dir is not None:
        chains = {}
        fits = {}
        for name in names:
            path = Path(cfg.chains_dir) / f"{name.lower()}_chain.csv"
            if not path.exists():
                raise FileNotFoundError(f"missing chain file {path}")
            spec = model_spec(name, t.I)
            chains[name] = read_chain_csv(path, spec, burn_in=cfg.burn_in)
            fits[name] = fit_mle(t, spec, box, cfg.optimizer())
    else:
        seed = _require_seed(cfg)
        chains, fits = _chains_for_models(cfg, t, box, names, seed)
    probs = congdon_probabilities([chains[n] for n in names], t)
    dics = np.array([dic(chains[n], t) for n in names])
    full = fits.get("M0", fits[names[0]])
    lhrs = np.array([lhr_pvalue(full, fits[n]) for n in names])
    comp = ModelComparison(names=tuple(names), posterior_probability=probs,
                           dic=dics, lhr_pvalue=lhrs)
    (out / "comparison.csv").write_text(comparison_csv(comp),
                                        encoding="utf-8")
    print(out / "comparison.csv")
    return EXIT_OK


def cmd_reserve(cfg: RunConfig) -> int:
    t = _load_triangle(cfg)
    seed = _require_seed(cfg)
    out = _out_dir(cfg, "reserve")
    box = cfg.box()
    spec = model_spec(cfg.model, t.I)
    fit = fit_mle(t, spec, box, cfg.optimizer())
    scales = _auto_scales(t, spec, box, fit, seed + 1)
    chain = run_chain(t, spec, box, scales, T=cfg.iterations,
                      T_b=cfg.burn_in, seed=seed, init=fit.params)
    predictive = None
    if cfg.predict:
        predictive = predictive_outstanding(
            chain, np.random.default_rng(seed + 2))
    report = bayesian_decomposition(chain, predictive=predictive)
    dump_json(report.to_json_dict(), out / "report.json")
    from .reserving import reserve_draws
    _hist_csv(out / "reserve_hist.csv", reserve_draws(chain))
    _hist_csv(out / "p_posterior_hist.csv", chain.retained[:, 0])
    if predictive is not None:
        _hist_csv(out / "outstanding_hist.csv", predictive)
    grid = cfg.grid_values()
    if grid:
        points = conditional_on_p(t, spec, box, grid, T=cfg.iterations,
                                  T_b=cfg.burn_in, seed=seed + 100,
                                  opts=cfg.optimizer(), mle_fit=fit)
        with open(out / "conditional.csv", "w", encoding="utf-8") as fh:
            fh.write("p,er,pv,ee,msep,mle_er,mle_pv,mle_ee,q25,q50,q75\n")
            for cp in points:
                row = [cp.p, cp.bayes.er, cp.bayes.pv, cp.bayes.ee,
                       cp.bayes.msep, cp.mle.reserve,
                       cp.mle.process_variance, cp.mle.estimation_error,
                       *cp.r_tilde_quartiles]
                fh.write(",".join(fmt17(v) for v in row) + "\n")
    print(out / "report.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tweedie-reserve",
        description="Tweedie compound Poisson claims reserving")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--triangle", dest="triangle_path",
                       help="incremental triangle CSV")
        p.add_argument("--model", choices=MODEL_NAMES, help="model name")
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("-T", "--iterations", type=int,
                       help="chain length (default 100000)")
        p.add_argument("--burn-in", dest="burn_in", type=int,
                       help="discarded initial iterations (default 10000)")
        p.add_argument("--threads", type=int, help="parallel chain cap")
        p.add_argument("--max-evals", dest="max_evals", type=int)
        p.add_argument("--restarts", type=int)
        for fam in ("p", "phi", "alpha", "beta"):
            p.add_argument(f"--prior-{fam}", dest=f"prior_{fam}",
                           metavar="LO:HI", help=f"prior box for {fam}")

    p_fit = sub.add_parser("fit", help="maximum likelihood fit")
    add_common(p_fit)
    p_fit.add_argument("--p-fixed", dest="p_fixed", type=float,
                       help="fix the variance power (1 and 2 are the "
                            "boundary models)")

    p_sample = sub.add_parser("sample", help="posterior MCMC chain")
    add_common(p_sample)
    p_sample.add_argument("--p-fixed", dest="p_fixed", type=float)
    p_sample.add_argument("--pretune", dest="do_pretune",
                          action="store_const", const=True, default=None,
                          help="batch-tune proposal scales before sampling")

    p_select = sub.add_parser("select", help="posterior model comparison")
    add_common(p_select)
    p_select.add_argument("--models", help="comma-separated subset of "
                                           "M0..M6 (default all)")
    p_select.add_argument("--chains", dest="chains_dir",
                          help="directory of pre-computed chain CSVs "
                               "(<model>_chain.csv)")

    p_res = sub.add_parser("reserve", help="reserve analytics")
    add_common(p_res)
    p_res.add_argument("--p-grid", dest="p_grid", metavar="A:B:STEP",
                       help="conditional-on-p grid")
    p_res.add_argument("--predict", action="store_const", const=True,
                       default=None,
                       help="simulate the outstanding-payment distribution")

    return parser


_COMMANDS = {"fit": cmd_fit, "sample": cmd_sample, "select": cmd_select,
             "reserve": cmd_reserve}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        return _COMMANDS[args.command](cfg)
    except TriangleParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
