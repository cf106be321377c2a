"""Command-line entry points: synth, fit, cv, grid, bootstrap, rotate, report.

Every subcommand writes its results into ``--out`` (a directory) together
with ``manifest.json``.  Settings come from flags, then an optional
``--config`` file of ``key = value`` lines, then built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from .design import design_from_spec
from .evaluation import (DEFAULT_LAMBDA_GRID, DEFAULT_RHO_GRID, cross_validate, default_models, grid_search,
                         select_best)
from .inference import bootstrap, summary_csv, variance_decomposition
from .io import (PLOT_KINDS, LoadError, Manifest, RecordSchema, default_schema, emit_plot_data, load_dataset,
                 parse_config, read_stamped_csv, stamp_csv, write_atomic, write_dataset)
from .optimizer import RESTRICTIONS, FitOptions, HyperParams, ModelFit, fit
from .rotation import rotation_table
from .synth import PopulationConfig, generate

log = logging.getLogger("semipar")

MODEL_KEYS = {
    "marginal": "Marginal mean",
    "region-strata": "Region:Sex:AgeClass",
    "lhu-strata": "LHU:Sex:AgeClass",
    "parallel": "Ordinal parallel model",
    "nonparallel": "Ordinal non-parallel model",
    "ridge": "Ridge LHU (alpha=0)",
    "lasso": "Lasso LHU (alpha=1)",
    "elasticnet": "ElasticNet LHU (alpha=0.5)",
}

DEFAULTS = {
    "synth": {"seed": 0},
    "fit": {"schema": None, "alpha": 0.5, "lambda": 1e-4, "rho": 1.0, "restriction": "none"},
    "cv": {"schema": None, "folds": 5, "seed": 0, "models": "all", "alpha": 0.5, "lambda": 1e-4, "rho": 1.0,
           "jobs": 1},
    "grid": {"schema": None, "alpha": 0.5, "lambda_grid": ",".join(repr(v) for v in DEFAULT_LAMBDA_GRID),
             "rho_grid": ",".join(repr(v) for v in DEFAULT_RHO_GRID), "folds": 5, "seed": 0, "jobs": 1},
    "bootstrap": {"schema": None, "alpha": 0.5, "lambda": 1e-4, "rho": 1.0, "restriction": "none",
                  "replicates": 1000, "seed": 0, "jobs": 1, "level": 0.95},
    "rotate": {"ensemble": None, "level": 0.95},
    "report": {"schema": None},
}

TYPES = {"alpha": float, "lambda": float, "rho": float, "level": float, "seed": int, "folds": int,
         "replicates": int, "jobs": int}

REQUIRED = {"synth": ("out",), "fit": ("data", "out"), "cv": ("data", "out"), "grid": ("data", "out"),
            "bootstrap": ("data", "out"), "rotate": ("fit", "out"), "report": ("in", "kind", "out")}


class CommandError(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="semipar", description=__doc__.splitlines()[0])
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=S)
        p.add_argument("--config", help="key = value file; flags take precedence")
        p.add_argument("--out", help="output directory")
        return p

    p = command("synth", "generate a synthetic population")
    p.add_argument("--seed", type=int)

    p = command("fit", "fit the penalized semi-parallel model (or a restricted one)")
    _data_flags(p)
    _hyper_flags(p)
    p.add_argument("--restriction", choices=RESTRICTIONS)

    p = command("cv", "cross-validate the comparison models")
    _data_flags(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--models", help=f"comma list from {', '.join(MODEL_KEYS)} or 'all'")
    _hyper_flags(p)
    p.add_argument("--jobs", type=int)

    p = command("grid", "grid search over lambda and rho")
    _data_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda-grid", dest="lambda_grid", help="comma-separated values")
    p.add_argument("--rho-grid", dest="rho_grid", help="comma-separated values")
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)

    p = command("bootstrap", "stratified bootstrap of the fitted coefficients")
    _data_flags(p)
    _hyper_flags(p)
    p.add_argument("--restriction", choices=RESTRICTIONS)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--level", type=float)

    p = command("rotate", "positivity-neutrality table of a fit")
    p.add_argument("--fit", help="fit.json")
    p.add_argument("--ensemble", help="ensemble.json for percentile bands")
    p.add_argument("--level", type=float)

    p = command("report", "tidy data files for figures")
    p.add_argument("--in", dest="in", help="dataset (regional, quartiles) or rotation.csv (others)")
    p.add_argument("--kind", choices=PLOT_KINDS)
    p.add_argument("--schema")
    return top


def _data_flags(p):
    p.add_argument("--data", help="comma-separated input file")
    p.add_argument("--schema", help="schema JSON (default: bundled reconstruction)")


def _hyper_flags(p):
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--rho", type=float)


def effective_config(command: str, flags: dict) -> dict:
    """Flags override the config file, which overrides defaults."""
    config = dict(DEFAULTS.get(command, {}))
    path = flags.pop("config", None)
    if path:
        for key, value in parse_config(path).items():
            config[key] = TYPES[key](value) if key in TYPES else value
    config.update({k: v for k, v in flags.items() if v is not None})
    missing = [k for k in REQUIRED[command] if config.get(k) is None]
    if missing:
        raise CommandError(f"missing required setting(s): {', '.join('--' + m for m in missing)}")
    return config


def _schema(config) -> RecordSchema:
    return RecordSchema.load(config["schema"]) if config.get("schema") else default_schema()


def _hyper(config) -> HyperParams:
    return HyperParams(float(config["lambda"]), float(config["alpha"]), float(config["rho"]))


def _floats(text) -> list:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _population_config(config: dict) -> PopulationConfig:
    fields = {f.name: f for f in dataclasses.fields(PopulationConfig)}
    kwargs = {}
    for key, value in config.items():
        if key not in fields or key == "truth":
            continue
        default = fields[key].default
        if isinstance(default, tuple):
            parts = [v.strip() for v in str(value).split(",") if v.strip()] if isinstance(value, str) else list(value)
            if key == "thresholds":
                parts = [float(v) for v in parts]
            elif key == "categories":
                parts = [int(v) for v in parts]
            kwargs[key] = tuple(parts)
        elif isinstance(default, bool):
            kwargs[key] = str(value).lower() in ("1", "true", "yes")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            kwargs[key] = type(default)(value)
        else:
            kwargs[key] = value
    return PopulationConfig(**kwargs)


def synth_schema(pc: PopulationConfig) -> RecordSchema:
    return RecordSchema("response", pc.categories, pc.variables(), "lhu" if pc.include_lhu else None, "region",
                        None, ("lhu", "sex", "age"), pc.scaling, "synthetic population")


def _json_with_manifest(doc: dict, manifest: Manifest) -> str:
    return json.dumps({**doc, "manifest": manifest.digest, "config": manifest.config}, indent=1,
                      sort_keys=True, default=str) + "\n"


def _write(out: Path, name: str, text: str, manifest: Manifest):
    write_atomic(out / name, text)
    manifest.outputs.append(name)


def run_synth(config, manifest, out):
    pc = _population_config(config)
    pop = generate(pc)
    schema = synth_schema(pc)
    write_dataset(pop.dataset, out / "data.csv", schema)
    manifest.outputs.append("data.csv")
    _write(out, "schema.json", schema.dumps() + "\n", manifest)
    _write(out, "truth.json", _json_with_manifest(pop.truth.to_dict(), manifest), manifest)
    return f"{pop.dataset.n} units, {pop.design.shape[1]} design columns"


def _load(config):
    schema = _schema(config)
    data = load_dataset(config["data"], schema)
    return schema, data


def run_fit(config, manifest, out):
    schema, data = _load(config)
    design = design_from_spec(data.records, schema.design_spec())
    result = fit(data, design, _hyper(config), FitOptions(restriction=config["restriction"]))
    doc = result.to_dict()
    doc["data"] = dict(data.info)
    _write(out, "fit.json", _json_with_manifest(doc, manifest), manifest)
    return f"converged={result.converged} iterations={result.n_iterations} objective={result.objective_value:.6f}"


def _models(config, schema):
    strata = schema.strata if len(schema.strata) == 3 else ("lhu", "sex", "age")
    family = default_models(float(config["lambda"]), float(config["rho"]), schema.region, *strata)
    keys = [k for k in MODEL_KEYS if MODEL_KEYS[k] in {m.name for m in family}]
    chosen = keys if config["models"] == "all" else [k.strip() for k in str(config["models"]).split(",")]
    unknown = [k for k in chosen if k not in keys]
    if unknown:
        raise CommandError(f"unknown model(s) {unknown}; available: {', '.join(keys)}")
    by_name = {m.name: m for m in family}
    models = [by_name[MODEL_KEYS[k]] for k in chosen]
    if float(config["alpha"]) != 0.5 and "elasticnet" in chosen:
        i = chosen.index("elasticnet")
        models[i] = dataclasses.replace(models[i], hyper=_hyper(config))
    return models


def run_cv(config, manifest, out):
    schema, data = _load(config)
    report = cross_validate(data, schema.design_spec(), _models(config, schema), int(config["folds"]),
                            int(config["seed"]), n_jobs=int(config["jobs"]))
    _write(out, "cv.csv", stamp_csv(report.to_frame(), manifest.digest), manifest)
    _write(out, "cv_summary.txt", report.summary("rps") + "\n" + report.summary("me"), manifest)
    return report.summary("rps")


def run_grid(config, manifest, out):
    schema, data = _load(config)
    report = grid_search(data, schema.design_spec(), _floats(config["lambda_grid"]), _floats(config["rho_grid"]),
                         float(config["alpha"]), int(config["folds"]), int(config["seed"]),
                         n_jobs=int(config["jobs"]))
    _write(out, "grid.csv", stamp_csv(report.to_frame(), manifest.digest), manifest)
    best = select_best(report.points)
    doc = {"lambda": best.lam, "rho": best.rho, "alpha": float(config["alpha"]), "rps": best.rps,
           "n_points": len(report.points)}
    _write(out, "best.json", _json_with_manifest(doc, manifest), manifest)
    return f"{len(report.points)} points; best lambda={best.lam:.4g} rho={best.rho:g} rps={best.rps:.5f}"


def run_bootstrap(config, manifest, out):
    schema, data = _load(config)
    design = design_from_spec(data.records, schema.design_spec())
    options = FitOptions(restriction=config["restriction"])
    labels = data.stratum_labels(schema.strata) if schema.strata else None
    ens = bootstrap(data, design, _hyper(config), int(config["replicates"]), int(config["seed"]), labels,
                    options, n_jobs=int(config["jobs"]))
    _write(out, "ensemble.json", _json_with_manifest(ens.to_dict(), manifest), manifest)
    if len(ens.successes) >= 20:
        _write(out, "bootstrap_summary.csv", stamp_csv(ens.summary(float(config["level"])), manifest.digest),
               manifest)
    decomposition = variance_decomposition(ens.full_fit, data, design).to_frame()
    _write(out, "variance.csv", f"# manifest: {manifest.digest}\n" + summary_csv(decomposition), manifest)
    status = "" if ens.reliable else " (unreliable: more than 10% of replicates failed)"
    return f"{len(ens.successes)}/{ens.R} replicates succeeded{status}"


def run_rotate(config, manifest, out):
    from .inference import BootstrapEnsemble

    fitted = ModelFit.from_dict(_read_json(config["fit"]))
    ensemble = BootstrapEnsemble.from_dict(_read_json(config["ensemble"])) if config.get("ensemble") else None
    table = rotation_table(fitted, ensemble, float(config["level"]))
    notes = [] if ensemble is not None else ["bands: none (no bootstrap ensemble supplied)"]
    _write(out, "rotation.csv", stamp_csv(table, manifest.digest, notes), manifest)
    return f"{len(table)} rotated coefficients"


def run_report(config, manifest, out):
    kind = config["kind"]
    if kind in ("regional", "quartiles"):
        schema = _schema(config)
        source = load_dataset(config["in"], schema)
    else:
        schema = None
        source = read_stamped_csv(config["in"])
    _write(out, f"{kind}.csv", emit_plot_data(kind, source, manifest.digest, schema), manifest)
    return f"wrote {kind}.csv"


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from None
    doc.pop("manifest", None)
    doc.pop("config", None)
    return doc


RUNNERS = {"synth": run_synth, "fit": run_fit, "cv": run_cv, "grid": run_grid, "bootstrap": run_bootstrap,
           "rotate": run_rotate, "report": run_report}


def run_command(argv) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    command = args.command
    started = time.perf_counter()
    try:
        config = effective_config(command, flags)
        out = Path(config["out"])
        echo = {k: v for k, v in sorted(config.items()) if k != "out"}
        manifest = Manifest(command, echo)
        message = RUNNERS[command](config, manifest, out)
    except (CommandError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"semipar {command}: error: {exc}", file=sys.stderr)
        return 1
    manifest.wall_time = round(time.perf_counter() - started, 3)
    write_atomic(out / "manifest.json", json.dumps(manifest.to_dict(), indent=1, sort_keys=True, default=str) + "\n")
    print(message)
    return 0


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
