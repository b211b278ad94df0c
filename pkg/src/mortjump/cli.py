"""Command-line interface: ``mortjump {fit,forecast,compare,score,simulate,rerun}``.

Every command writes a ``manifest.json`` into its output directory holding
the resolved arguments, the effective seed, input and output SHA-256 hashes
and library versions.  ``mortjump rerun`` replays a manifest into a fresh
directory and checks that every output is byte-identical.

Exit codes: 0 success, 1 statistical failure (some R-hat > 1.05, or a rerun
whose outputs differ), 2 usage or data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import IncompatibleFits, MortjumpError
from .model import JumpStructure, McmcSettings, ModelSpec, config_hash, dump_config, load_config

SEED_ENV = "MORTJUMP_SEED"
MODELS = {"lc": "none", "liuli": "independent", "ar": "ar1", "ma": "ma1", "multipop": None}
STRUCTURE_LABELS = {"none": "LC", "independent": "Liu-Li", "ar1": "AR", "ma1": "MA"}
MANIFEST = "manifest.json"

EXIT_OK, EXIT_STAT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numba
    import scipy

    return {"mortjump": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__, "numba": numba.__version__}


def resolve_seed(cli_seed, default: int) -> int:
    """MORTJUMP_SEED beats --seed, which beats the config/default seed."""
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return int(default if cli_seed is None else cli_seed)


def write_manifest(out: Path, command: str, args: dict, seed: int, inputs: dict, extra: dict | None = None):
    outputs = {p.name: sha256_file(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != MANIFEST}
    manifest = {
        "command": command,
        "args": args,
        "seed": int(seed),
        "inputs": inputs,
        "outputs": outputs,
        "versions": versions(),
        **(extra or {}),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory)
    path = path / MANIFEST if path.is_dir() else path
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return json.loads(path.read_text())


def _abs(path) -> str | None:
    return None if path is None else str(Path(path).resolve())


def _improvements(table, impute_zero: bool):
    from .data import central_death_rates, improvement_rates

    rates = central_death_rates(table, impute_zero=impute_zero)
    return rates, improvement_rates(rates)


def column_schema(pairs) -> dict:
    """Parse repeated ``KEY=NAME`` column overrides into a schema map."""
    from .data import DEFAULT_SCHEMA

    schema = {}
    for pair in pairs or []:
        key, sep, name = pair.partition("=")
        if not sep or key not in DEFAULT_SCHEMA or not name:
            raise UsageError(f"--column expects KEY=NAME with KEY in {sorted(DEFAULT_SCHEMA)}, got {pair!r}")
        schema[key] = name
    return schema


def data_hash(path, populations) -> str:
    """Hash of the data file bytes and the selected populations."""
    h = hashlib.sha256(sha256_file(path).encode())
    h.update(json.dumps(sorted(populations)).encode())
    return h.hexdigest()


# ---------------------------------------------------------------- fit

def cmd_fit(a: dict) -> int:
    from .data import load_mortality_tables
    from .diagnostics import RHAT_THRESHOLD, converged, diagnostics_table, write_diagnostics
    from .multipop import run_mcmc_multipop
    from .samplers import run_mcmc

    if a["model"] not in MODELS:
        raise UsageError(f"unknown model {a['model']!r}; choose from {sorted(MODELS)}")
    data = Path(a["data"])
    if not data.exists():
        raise FileNotFoundError(f"data file not found: {data}")
    spec, settings = load_config(a["config"]) if a.get("config") else (ModelSpec(), None)
    structure = MODELS[a["model"]] or spec.structure.value
    spec = ModelSpec(structure, spec.priors, spec.no_jump_years)
    settings = settings or McmcSettings()
    overrides = {k: a[k] for k in ("n_chains", "burn_in", "n_samples", "thin") if a.get(k) is not None}
    settings = McmcSettings(**{**vars(settings), **overrides, "seed": a["seed"]})

    tables = load_mortality_tables(data, column_schema(a.get("column")))
    if a["model"] == "multipop":
        pops = a.get("populations") or list(tables)
    else:
        if a.get("population"):
            pops = [a["population"]]
        elif len(tables) == 1:
            pops = list(tables)
        else:
            raise UsageError(f"{data} holds populations {sorted(tables)}; pass --population")
    missing = [p for p in pops if p not in tables]
    if missing:
        raise UsageError(f"population(s) {missing} not in {data}")
    rates, Zs = {}, {}
    for p in pops:
        rates[p], Zs[p] = _improvements(tables[p], a.get("impute_zero", False))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if a["model"] == "multipop":
            draws = run_mcmc_multipop(spec, Zs, settings, threads=a.get("threads"))
        else:
            draws = run_mcmc(spec, Zs[pops[0]], settings, threads=a.get("threads"))
            draws.countries = [pops[0]]
    draws.meta["base_log_rates"] = {p: np.log(rates[p].values[:, -1]).tolist() for p in pops}
    draws.meta["model_name"] = a["model"]

    out = Path(a["out"])
    out.mkdir(parents=True, exist_ok=True)
    draws.to_csv(out)
    table = diagnostics_table(draws)
    write_diagnostics(table, out / "diagnostics.csv")
    (out / "config.yaml").write_text(dump_config(spec, settings))
    ok = converged(table)
    write_manifest(out, "fit", a, settings.seed, {"data": sha256_file(data)}, {
        "config_hash": config_hash(spec, settings),
        "data_hash": data_hash(data, pops),
        "populations": pops,
        "model": a["model"],
        "structure": spec.structure.value,
        "converged": ok,
    })
    worst = np.nanmax(table["rhat"].to_numpy(dtype=float)) if table["rhat"].notna().any() else float("nan")
    print(f"fit {a['model']} on {', '.join(pops)}: {draws.n_draws} draws, max R-hat {worst:.4f}")
    if not ok:
        print(f"nonconvergence: some R-hat >= {RHAT_THRESHOLD}; see {out / 'diagnostics.csv'}", file=sys.stderr)
        return EXIT_STAT
    return EXIT_OK


def load_fit(directory):
    from .samplers import PosteriorDraws

    directory = Path(directory)
    if not (directory / "draws.csv").exists():
        raise FileNotFoundError(f"no fit found in {directory} (draws.csv missing)")
    return PosteriorDraws.from_csv(directory), read_manifest(directory)


# ---------------------------------------------------------------- forecast

def _run_forecast(fit_dir, H: int, seed: int):
    from .forecast import forecast

    draws, man = load_fit(fit_dir)
    base = {c: np.asarray(v) for c, v in draws.meta["base_log_rates"].items()}
    if len(draws.countries) == 1:
        fans = {draws.countries[0]: forecast(draws, base[draws.countries[0]], H, rng=seed)}
        fans[draws.countries[0]].population = draws.countries[0]
    else:
        fans = forecast(draws, base, H, rng=seed)
    return draws, man, fans


def cmd_forecast(a: dict) -> int:
    from .forecast import shock_increase_quantiles

    draws, man, fans = _run_forecast(a["fit"], a["horizon"], a["seed"])
    out = Path(a["out"])
    out.mkdir(parents=True, exist_ok=True)
    frames = [fan.to_frame().assign(population=pop, year=lambda f, fan=fan: fan.base_year + f["horizon"])
              for pop, fan in fans.items()]
    fan_frame = pd.concat(frames, ignore_index=True)
    fan_frame = fan_frame[["population", "draw", "age", "horizon", "year", "log_rate"]]
    fan_frame.to_csv(out / "fan.csv", index=False)
    pd.concat([fan.summary() for fan in fans.values()], ignore_index=True).to_csv(out / "fan_summary.csv", index=False)
    if draws.structure.has_jumps:
        shocks = [shock_increase_quantiles(draws, country=c).assign(population=c) for c in draws.countries]
        pd.concat(shocks, ignore_index=True).to_csv(out / "shock_increase.csv", index=False)
    write_manifest(out, "forecast", a, a["seed"], {"fit_manifest": sha256_file(Path(a["fit"]) / MANIFEST)},
                   {"data_hash": man.get("data_hash"), "horizon": a["horizon"]})
    print(f"forecast H={a['horizon']}: {len(fan_frame)} rows written to {out / 'fan.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- compare

def comparison_tables(fits: list) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Long table (one row per fit) and the criterion x model x population layout."""
    from .compare import comparison_report

    hashes = {man.get("data_file_hash", man["inputs"]["data"]) for _, man in fits}
    if len(hashes) > 1:
        raise IncompatibleFits("fits were run on different data files (data hashes differ)")
    rows = []
    seen = set()
    for draws, man in fits:
        label = STRUCTURE_LABELS.get(man["structure"], man["structure"])
        if man["model"] == "multipop":
            label = f"{label} (joint)"
        pop = "+".join(man["populations"])
        if (label, pop) in seen:
            raise IncompatibleFits(f"two fits of model {label} on population {pop}")
        seen.add((label, pop))
        rep = comparison_report({label: draws.loglik}).iloc[0]
        rows.append({"population": pop, "model": label, **{k: rep[k] for k in
                     ("waic", "lpd_hat", "p_waic", "loo_deviance", "n_pareto_k_gt_0.7")}})
    long = pd.DataFrame(rows)
    long["best_waic"] = long.groupby("population")["waic"].transform("min") == long["waic"]
    long["best_loo"] = long.groupby("population")["loo_deviance"].transform("min") == long["loo_deviance"]
    pops = list(dict.fromkeys(long["population"]))
    models = list(dict.fromkeys(long["model"]))
    layout = []
    for crit, col in (("WAIC", "waic"), ("LOO-CV", "loo_deviance")):
        for mdl in models:
            row = {"criterion": crit, "model": mdl}
            for p in pops:
                hit = long[(long["population"] == p) & (long["model"] == mdl)]
                row[p] = float(hit[col].iloc[0]) if len(hit) else np.nan
            layout.append(row)
    return long, pd.DataFrame(layout)


def cmd_compare(a: dict) -> int:
    if len(a["fits"]) < 2:
        raise UsageError("compare needs at least two fit directories")
    fits = [load_fit(d) for d in a["fits"]]
    long, layout = comparison_tables(fits)
    out = Path(a["out"])
    out.mkdir(parents=True, exist_ok=True)
    long.to_csv(out / "comparison.csv", index=False)
    layout.to_csv(out / "table.csv", index=False)
    write_manifest(out, "compare", a, 0, {d: sha256_file(Path(d) / MANIFEST) for d in a["fits"]})
    shown = layout.astype(object)
    for p in [c for c in layout.columns if c not in ("criterion", "model")]:
        for crit in ("WAIC", "LOO-CV"):
            sel = shown["criterion"] == crit
            best = layout.loc[sel, p].min()
            shown.loc[sel, p] = [f"{v:.2f}{'*' if v == best else ''}" for v in layout.loc[sel, p]]
    print(shown.to_string(index=False))
    print("* lowest value in column")
    return EXIT_OK


# ---------------------------------------------------------------- score

def cmd_score(a: dict) -> int:
    from .data import central_death_rates, load_mortality_tables
    from .forecast import ForecastFan, forecast_scores

    fman = read_manifest(a["forecast"])
    if fman.get("command") != "forecast":
        raise UsageError(f"{a['forecast']} is not a forecast directory")
    fa = fman["args"]
    _, _, fans = _run_forecast(fa["fit"], fa["horizon"], fman["seed"])
    data = Path(a["data"])
    tables = load_mortality_tables(data, column_schema(a.get("column")))
    tables_out, totals_out = [], {}
    for pop, fan in fans.items():
        if pop not in tables:
            if len(tables) == 1 and len(fans) == 1:
                table = next(iter(tables.values()))
            else:
                raise UsageError(f"population {pop!r} not in {data}")
        else:
            table = tables[pop]
        if list(table.ages) != list(fan.ages):
            raise UsageError(f"age groups in {data} do not match the fit")
        logm = np.log(central_death_rates(table, impute_zero=a.get("impute_zero", False)).values)
        years = [y for y in fan.years if y in table.years]
        if not years or years != fan.years[: len(years)]:
            raise UsageError(f"{data} must hold the years following {fan.base_year} without gaps")
        h = len(years)
        cols = [table.years.index(y) for y in years]
        sub = ForecastFan(fan.draws[:, :, :h], fan.z_draws[:, :, :h], fan.z_means[:, :, :h], fan.sigma_r,
                          fan.base_log_rates, fan.base_year, fan.ages, pop)
        obs = logm[:, cols] if a["kind"] == "log_rate" else np.diff(
            np.concatenate([fan.base_log_rates[:, None], logm[:, cols]], axis=1), axis=1)
        cells, totals = forecast_scores(sub, obs, kind=a["kind"])
        tables_out.append(cells.assign(population=pop))
        totals_out[pop] = {k: float(v) for k, v in totals.items()}
    out = Path(a["out"])
    out.mkdir(parents=True, exist_ok=True)
    pd.concat(tables_out, ignore_index=True).to_csv(out / "scores.csv", index=False)
    (out / "scores_summary.json").write_text(json.dumps(totals_out, indent=2, sort_keys=True))
    write_manifest(out, "score", a, fman["seed"], {"data": sha256_file(data),
                                                   "forecast_manifest": sha256_file(Path(a["forecast"]) / MANIFEST)})
    for pop, t in totals_out.items():
        print(pop + ": " + ", ".join(f"{k}={v:.6g}" for k, v in t.items()))
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def cmd_simulate(a: dict) -> int:
    from .identify import recover
    from .synth import default_truth, multipop_truth, simulate_dataset

    structure = MODELS.get(a["model"], a["model"])
    if structure is None:
        raise UsageError("simulate takes a single structure; use --populations for several populations")
    structure = JumpStructure.parse(structure)
    C = a["populations"]
    bad = [t for t in a["shock_years"] if not 3 <= t <= a["years"] - 1]
    if bad:
        raise UsageError(f"shock years {bad} must lie in 3..{a['years'] - 1} (first two and last years are pinned)")
    if C < 1:
        raise UsageError("--populations must be at least 1")
    kw = dict(A=a["ages"], T=a["years"], shock_years=tuple(a["shock_years"]), coeff=a["coeff"],
              sigma_r=a["sigma_r"], sigma_xi=a["sigma_xi"])
    if C == 1:
        truth = default_truth(structure, **kw)
    else:
        truth = multipop_truth(structure, [f"P{k + 1}" for k in range(C)], **kw)
    sim = simulate_dataset(truth, seed=a["seed"], first_year=a["first_year"])
    out = Path(a["out"])
    out.mkdir(parents=True, exist_ok=True)
    sim.write(out / "data.csv")
    status = EXIT_OK
    if a.get("verify"):
        pin = a["years"] if structure.has_jumps else None
        states = [truth] if C == 1 else [truth.country(k) for k in range(C)]
        for k, st in enumerate(states):
            name = structure.coeff_name or "coeff"
            try:
                coeff, N, Y = recover(st.J, structure, pin)
            except MortjumpError as exc:
                print(f"population {sim.populations[k]}: identification failed: {exc}")
                status = EXIT_STAT
                continue
            ok = abs(coeff - st.coeff) < 1e-9 and np.allclose(N, st.N, atol=1e-9) and np.allclose(
                Y, np.where(st.N == 1, st.Y, 0.0), atol=1e-9)
            print(f"population {sim.populations[k]}: recovered {name} = {coeff:.12g} "
                  f"(truth {st.coeff:.12g}) {'OK' if ok else 'MISMATCH'}")
            status = status if ok else EXIT_STAT
    write_manifest(out, "simulate", a, a["seed"], {})
    print(f"simulated {structure.value} panel for {C} population(s) written to {out / 'data.csv'}")
    return status


# ---------------------------------------------------------------- rerun

COMMANDS = {"fit": cmd_fit, "forecast": cmd_forecast, "compare": cmd_compare, "score": cmd_score,
            "simulate": cmd_simulate}


def rerun(manifest_path, out) -> tuple[int, list]:
    """Replay a manifest into ``out``; returns (exit code of the command, differing files)."""
    man = read_manifest(manifest_path)
    args = dict(man["args"])
    args["out"] = str(Path(out).resolve())
    args["seed"] = man["seed"]
    code = COMMANDS[man["command"]](args)
    new = read_manifest(out)
    diff = sorted(k for k in set(man["outputs"]) | set(new["outputs"])
                  if man["outputs"].get(k) != new["outputs"].get(k))
    return code, diff


def cmd_rerun(a: dict) -> int:
    _, diff = rerun(a["manifest"], a["out"])
    if diff:
        print("outputs differ: " + ", ".join(diff))
        return EXIT_STAT
    print("all outputs reproduced bit-exactly")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mortjump", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mortjump {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model by MCMC")
    f.add_argument("--data", required=True, help="long-format CSV of deaths and exposures")
    f.add_argument("--model", required=True, choices=sorted(MODELS))
    f.add_argument("--config", help="YAML config (structure, priors, no_jump_years, mcmc)")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--seed", type=int, help=f"master seed (overridden by {SEED_ENV})")
    f.add_argument("--threads", type=int, help="worker threads for chains (default: number of chains)")
    f.add_argument("--population", help="population to fit when the file holds several")
    f.add_argument("--populations", nargs="+", help="populations for a multipop fit (default: all)")
    f.add_argument("--column", action="append", metavar="KEY=NAME",
                   help="CSV column for KEY (age, year, deaths, exposure, population); repeatable")
    f.add_argument("--impute-zero", action="store_true", help="replace zero death counts by 0.5")
    f.add_argument("--chains", dest="n_chains", type=int)
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--samples", dest="n_samples", type=int)
    f.add_argument("--thin", type=int)

    fc = sub.add_parser("forecast", help="posterior-predictive fan from a fit")
    fc.add_argument("--fit", required=True, help="fit directory")
    fc.add_argument("--horizon", type=int, default=30)
    fc.add_argument("--out", required=True)
    fc.add_argument("--seed", type=int)

    c = sub.add_parser("compare", help="WAIC / LOO table over fits of one data file")
    c.add_argument("fits", nargs="+", help="two or more fit directories")
    c.add_argument("--out", required=True)

    s = sub.add_parser("score", help="LogS, CRPS and errors of a forecast against held-out data")
    s.add_argument("--forecast", required=True, help="forecast directory")
    s.add_argument("--data", required=True, help="held-out long-format CSV")
    s.add_argument("--kind", choices=("log_rate", "improvement"), default="log_rate")
    s.add_argument("--column", action="append", metavar="KEY=NAME",
                   help="CSV column for KEY (age, year, deaths, exposure, population); repeatable")
    s.add_argument("--impute-zero", action="store_true")
    s.add_argument("--out", required=True)

    sm = sub.add_parser("simulate", help="synthetic panel from known parameters")
    sm.add_argument("--model", default="ar", choices=[m for m in MODELS if m != "multipop"])
    sm.add_argument("--out", required=True)
    sm.add_argument("--seed", type=int)
    sm.add_argument("--ages", type=int, default=10)
    sm.add_argument("--years", type=int, default=33)
    sm.add_argument("--first-year", dest="first_year", type=int, default=1991)
    sm.add_argument("--shock-years", dest="shock_years", type=int, nargs="+", default=[24, 25],
                    help="1-based year positions of the shocks")
    sm.add_argument("--coeff", type=float, default=0.4)
    sm.add_argument("--sigma-r", dest="sigma_r", type=float, default=0.02)
    sm.add_argument("--sigma-xi", dest="sigma_xi", type=float, default=0.1)
    sm.add_argument("--populations", type=int, default=1)
    sm.add_argument("--verify", action="store_true", help="run the identification round trip on the truth")

    r = sub.add_parser("rerun", help="replay a manifest and check outputs are identical")
    r.add_argument("manifest", help="manifest.json or the directory holding it")
    r.add_argument("--out", required=True)
    return p


DEFAULT_SEEDS = {"fit": None, "forecast": 0, "simulate": 0}


def _resolve(ns: argparse.Namespace) -> dict:
    a = {k: v for k, v in vars(ns).items() if k != "command"}
    for key in ("data", "config", "out", "fit", "forecast", "manifest"):
        if a.get(key) is not None:
            a[key] = _abs(a[key])
    if "fits" in a:
        a["fits"] = [_abs(d) for d in a["fits"]]
    if ns.command in DEFAULT_SEEDS:
        default = DEFAULT_SEEDS[ns.command]
        if ns.command == "fit":
            cfg = load_config(a["config"])[1] if a.get("config") else None
            default = (cfg or McmcSettings()).seed
        a["seed"] = resolve_seed(a.get("seed"), default)
    return a


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        a = _resolve(ns)
        if ns.command == "rerun":
            return cmd_rerun(a)
        return COMMANDS[ns.command](a)
    except (UsageError, MortjumpError, FileNotFoundError) as exc:
        print(f"mortjump {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
