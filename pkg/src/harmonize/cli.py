"""Command line interface.

Every subcommand takes ``--config <path>`` (a JSON file), ``--seed``, and
``--out <dir>``; specific flags override the matching config keys. Exit
codes: 0 success, 2 config error, 3 data error. ``HARMONIZE_THREADS``
caps experiment parallelism.

Config keys by command (all optional unless noted):

* simulate:      "simulation" section (truth overrides).
* fit:           "data"*, "test_id"*, "model"*, "mu", "R", "nodes_per_bin",
                 "cells", "solver", "max_iters", "tol".
* select-model:  "data"*, "test_id"*, "support_size"*, "grid"
                 ({"families", "bandwidths", "include_binomial"}), "mu",
                 "R", "nodes_per_bin", "max_gap_years".
* select-mu:     "data"*, "test_id"*, "model"*, "mu_grid", "R",
                 "nodes_per_bin", "cells", "max_gap_years".
* feasibility:   "data"*, "test_id"*, "model"*, "order" (1, 2 or "both"),
                 "R", "nodes_per_bin", "max_iters".
* convert:       "source"* and "target"* sections ({"test_id", "model",
                 "mu", "fit"}), "data" (to fit from when no "fit" paths),
                 "scores" (records to convert; defaults to source-test
                 records in "data"), "cells", "draws", "R", "nodes_per_bin".
* evaluate:      like convert plus "crosswalk"* (CSV of paired scores).
* experiment:    "simulation" and "experiment" sections.

(* = required, via config or flag.)
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .baselines import (
    fit_logit_normal,
    fit_zscore,
    logit_normal_binned,
    zscore_matrix,
)
from .conversion import (
    ConversionModel,
    CrossEntropyResult,
    CrosswalkRecord,
    FittedBranch,
    conversion_matrix,
    conversion_sample,
    sample_cross_entropy,
)
from .diagnostics import first_order_feasibility, second_order_feasibility
from .errors import ConfigError, DataError
from .experiments import EXPERIMENTS, run_experiment
from .measurement import (
    DEFAULT_NODES_PER_BIN,
    MeasurementModel,
    discretize,
    discretize_second_order,
)
from .probcore import (
    CovariateCell,
    assign_cell,
    conditional_empirical,
    empirical,
    first_visits,
    paired_empirical,
    read_records,
    write_records,
)
from .selection import ModelGrid, build_pairs, select_model, select_mu
from .simulate import SimulationConfig, config_hash, simulate_harmonizable
from .solver import BinnedLatent, FitOptions, fit, fit_per_cell


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _require(cfg: dict, key: str, flag: str | None = None):
    value = flag if flag is not None else cfg.get(key)
    if value is None:
        raise ConfigError(f"missing required setting {key!r} (config key or flag)")
    return value


def _parse_model(value) -> MeasurementModel:
    """Accept {"family","N","h"} dicts or compact "family:N[:h]" strings."""
    if isinstance(value, MeasurementModel):
        return value
    if isinstance(value, dict):
        return MeasurementModel.from_dict(value)
    text = str(value).strip()
    if text.startswith("{"):
        return MeasurementModel.from_json(text)
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"model must look like family:N[:h], got {value!r}")
    try:
        family = parts[0]
        support = int(parts[1])
        bandwidth = float(parts[2]) if len(parts) == 3 else None
    except ValueError:
        raise ConfigError(f"cannot parse model spec {value!r}")
    try:
        return MeasurementModel(family, support, bandwidth)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _parse_cells(cfg: dict):
    raw = cfg.get("cells")
    if raw is None:
        return None
    try:
        return [CovariateCell(**d) for d in raw]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad cells section: {exc}")


def _fit_options(cfg: dict) -> FitOptions | None:
    keys = {k: cfg[k] for k in ("solver", "max_iters", "tol") if k in cfg}
    if not keys:
        return None
    try:
        return FitOptions(**keys)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver options: {exc}")


def _out_dir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_csv(path: Path, columns, rows) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def _records_for_test(path, test_id: str):
    records = [r for r in read_records(path) if r.test_id == test_id]
    if not records:
        raise DataError(f"no records with test_id={test_id!r} in {path}")
    return records


@click.group()
@click.version_option(package_name="score-harmonize", prog_name="harmonize")
def main():
    """Latent-trait estimation, diagnostics, and score conversion."""


# ---- simulate ----


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Output directory.")
@_guarded
def simulate(config_path, seed, out):
    """Draw a synthetic dataset and write records/crosswalk CSVs."""
    cfg = _load_config(config_path)
    unknown = set(cfg) - {"simulation"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sim_cfg = SimulationConfig.from_dict(cfg.get("simulation", {}))
    chash = config_hash({"simulation": sim_cfg.to_dict()})
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    data = simulate_harmonizable(sim_cfg, rng)

    out_path = _out_dir(out)
    records_path = out_path / "records.csv"
    write_records(records_path, data.all_records())
    written = [str(records_path)]
    if data.crosswalk:
        cw_path = out_path / "crosswalk.csv"
        _write_csv(
            cw_path,
            ["subject_id", "y", "z", "age", "group"],
            [
                {"subject_id": r.subject_id, "y": r.y, "z": r.z, "age": r.age, "group": r.group}
                for r in data.crosswalk
            ],
        )
        written.append(str(cw_path))
    run_path = out_path / "simulate_run.json"
    _write_json(
        run_path,
        {"simulation": sim_cfg.to_dict(), "seed": seed, "config_hash": chash},
    )
    written.append(str(run_path))
    for p in written:
        click.echo(f"wrote {p}")


# ---- fit ----


def _fit_branch(records, model, mu, cells, r_bins, nodes, options):
    """Per-cell latents for one instrument from its (already filtered) records."""
    disc = discretize(model, r_bins, nodes)
    latents = fit_per_cell(records, disc, mu, cells, options)
    return disc, latents


def _fit_payload(test_id, model, mu, cells, nodes, latents, chash, seed) -> dict:
    cell_list = None if cells is None else [
        {"group": c.group, "age_center": c.age_center, "half_width": c.half_width}
        for c in cells
    ]
    keys = [None] if cells is None else [c.key() for c in cells]
    return {
        "test_id": test_id,
        "model": json.loads(model.to_json()),
        "nodes_per_bin": nodes,
        "mu": mu,
        "cells": cell_list,
        "latents": [json.loads(latents[k].to_json()) for k in keys],
        "config_hash": chash,
        "seed": seed,
    }


def _load_fit(path):
    """Rebuild (model, nodes_per_bin, cells, latents-by-key) from a fit file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise DataError(f"fit file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"fit file {path} is not valid JSON: {exc}")
    try:
        model = MeasurementModel.from_dict(payload["model"])
        nodes = int(payload.get("nodes_per_bin", DEFAULT_NODES_PER_BIN))
        test_id = payload.get("test_id")
        raw_cells = payload.get("cells")
        cells = None if raw_cells is None else [CovariateCell(**d) for d in raw_cells]
        keys = [None] if cells is None else [c.key() for c in cells]
        latents = {
            k: BinnedLatent.from_json(json.dumps(entry))
            for k, entry in zip(keys, payload["latents"])
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"fit file {path} is malformed: {exc}")
    return model, nodes, cells, latents, test_id


@main.command(name="fit")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Output directory.")
@click.option("--data", "data_path", type=click.Path(), default=None, help="Records CSV.")
@click.option("--test", "test_id", default=None, help="Instrument id to fit.")
@click.option("--model", "model_flag", default=None, help='family:N[:h] or JSON.')
@click.option("--mu", type=float, default=None, help="Regularization weight.")
@_guarded
def fit_command(config_path, seed, out, data_path, test_id, model_flag, mu):
    """Fit the regularized latent distribution for one instrument."""
    cfg = _load_config(config_path)
    data_path = _require(cfg, "data", data_path)
    test_id = _require(cfg, "test_id", test_id)
    model = _parse_model(_require(cfg, "model", model_flag))
    mu = float(cfg.get("mu", 0.01) if mu is None else mu)
    r_bins = int(cfg.get("R", 1000))
    nodes = int(cfg.get("nodes_per_bin", DEFAULT_NODES_PER_BIN))
    cells = _parse_cells(cfg)
    options = _fit_options(cfg)

    records = _records_for_test(data_path, test_id)
    disc, latents = _fit_branch(records, model, mu, cells, r_bins, nodes, options)

    chash = config_hash(
        {
            "command": "fit",
            "test_id": test_id,
            "model": json.loads(model.to_json()),
            "mu": mu,
            "R": r_bins,
            "nodes_per_bin": nodes,
        }
    )
    out_path = _out_dir(out)
    fit_path = out_path / f"fit_{test_id}.json"
    _write_json(fit_path, _fit_payload(test_id, model, mu, cells, nodes, latents, chash, seed))
    for key, latent in latents.items():
        label = "all" if key is None else str(key)
        click.echo(
            f"fit {test_id} [{label}]: loglik={latent.loglik:.6f} "
            f"iterations={latent.iterations} converged={latent.converged}"
        )
    click.echo(f"wrote {fit_path}")


# ---- select-model ----


@main.command(name="select-model")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Output directory.")
@click.option("--data", "data_path", type=click.Path(), default=None)
@click.option("--test", "test_id", default=None)
@click.option("--support-size", type=int, default=None, help="Score support size N.")
@_guarded
def select_model_command(config_path, seed, out, data_path, test_id, support_size):
    """Rank measurement models by intrinsic repeat-visit variability."""
    cfg = _load_config(config_path)
    data_path = _require(cfg, "data", data_path)
    test_id = _require(cfg, "test_id", test_id)
    support = int(_require(cfg, "support_size", support_size))
    grid_cfg = cfg.get("grid", {})
    unknown = set(grid_cfg) - {"families", "bandwidths", "include_binomial"}
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    grid = ModelGrid.build(
        support,
        kernel_families=grid_cfg.get("families", ("gaussian", "laplace")),
        bandwidths=grid_cfg.get("bandwidths", (0.5, 1.0, 2.0, 4.0, 8.0)),
        include_binomial=grid_cfg.get("include_binomial", True),
    )
    mu = float(cfg.get("mu", 0.01))
    r_bins = int(cfg.get("R", 1000))
    nodes = int(cfg.get("nodes_per_bin", DEFAULT_NODES_PER_BIN))

    records = _records_for_test(data_path, test_id)
    pairs = build_pairs(records, test_id=None, **(
        {"max_gap_years": float(cfg["max_gap_years"])} if "max_gap_years" in cfg else {}
    ))
    selection = select_model(pairs, grid, mu, R=r_bins, nodes_per_bin=nodes)

    chash = config_hash(
        {"command": "select-model", "test_id": test_id, "support_size": support, "mu": mu}
    )
    rows = [
        {
            "model": m.label(),
            "family": m.family,
            "bandwidth": "" if m.bandwidth is None else m.bandwidth,
            "mu": mu,
            "tv": tv,
            "config_hash": chash,
            "seed": seed,
        }
        for m, tv in selection.table
    ]
    out_path = _out_dir(out)
    csv_path = out_path / "select_model.csv"
    _write_csv(
        csv_path, ["model", "family", "bandwidth", "mu", "tv", "config_hash", "seed"], rows
    )
    click.echo(f"best model: {selection.best.label()}")
    click.echo(f"wrote {csv_path}")


# ---- select-mu ----


@main.command(name="select-mu")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Output directory.")
@click.option("--data", "data_path", type=click.Path(), default=None)
@click.option("--test", "test_id", default=None)
@click.option("--model", "model_flag", default=None, help='family:N[:h] or JSON.')
@_guarded
def select_mu_command(config_path, seed, out, data_path, test_id, model_flag):
    """Pick the regularization weight by two-observation likelihood."""
    cfg = _load_config(config_path)
    data_path = _require(cfg, "data", data_path)
    test_id = _require(cfg, "test_id", test_id)
    model = _parse_model(_require(cfg, "model", model_flag))
    r_bins = int(cfg.get("R", 1000))
    nodes = int(cfg.get("nodes_per_bin", DEFAULT_NODES_PER_BIN))
    cells = _parse_cells(cfg)
    mu_grid = cfg.get("mu_grid")

    records = _records_for_test(data_path, test_id)
    pairs = build_pairs(records, test_id=None, **(
        {"max_gap_years": float(cfg["max_gap_years"])} if "max_gap_years" in cfg else {}
    ))
    selection = select_mu(
        pairs, model, mu_grid=mu_grid, cells=cells, R=r_bins, nodes_per_bin=nodes
    )

    chash = config_hash(
        {"command": "select-mu", "test_id": test_id, "model": json.loads(model.to_json())}
    )
    rows = [
        {
            "model": model.label(),
            "mu": mu,
            "loglik": ll,
            "selected": int(mu == selection.best_mu),
            "config_hash": chash,
            "seed": seed,
        }
        for mu, ll in selection.table
    ]
    out_path = _out_dir(out)
    csv_path = out_path / "select_mu.csv"
    _write_csv(csv_path, ["model", "mu", "loglik", "selected", "config_hash", "seed"], rows)
    click.echo(f"best mu: {selection.best_mu:g}")
    click.echo(f"wrote {csv_path}")


# ---- feasibility ----


@main.command(name="feasibility")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=None, help="Optional output directory for the CSV.")
@click.option("--data", "data_path", type=click.Path(), default=None)
@click.option("--test", "test_id", default=None)
@click.option("--model", "model_flag", default=None, help='family:N[:h] or JSON.')
@click.option(
    "--order", "order_flag", default=None, help="1, 2, or both (default both)."
)
@_guarded
def feasibility_command(config_path, seed, out, data_path, test_id, model_flag, order_flag):
    """Test whether a measurement model can explain the observed scores."""
    cfg = _load_config(config_path)
    data_path = _require(cfg, "data", data_path)
    test_id = _require(cfg, "test_id", test_id)
    model = _parse_model(_require(cfg, "model", model_flag))
    order = str(cfg.get("order", "both") if order_flag is None else order_flag)
    if order not in ("1", "2", "both"):
        raise ConfigError(f"order must be 1, 2 or both, got {order!r}")
    r_bins = int(cfg.get("R", 1000))
    nodes = int(cfg.get("nodes_per_bin", DEFAULT_NODES_PER_BIN))
    options = FitOptions(max_iters=int(cfg["max_iters"])) if "max_iters" in cfg else None

    records = _records_for_test(data_path, test_id)
    results = []
    if order in ("1", "both"):
        firsts = first_visits(records)
        phat = empirical([r.score for r in firsts], model.support_size)
        disc = discretize(model, r_bins, nodes)
        results.append(first_order_feasibility(phat, disc, len(firsts), options=options))
    if order in ("2", "both"):
        pairs = build_pairs(records, test_id=None)
        phat2 = paired_empirical(pairs.y1, pairs.y2, model.support_size)
        disc2 = discretize_second_order(model, r_bins, nodes)
        results.append(second_order_feasibility(phat2, disc2, pairs.n, options=options))

    header = f"{'model':<16} {'order':>5} {'statistic':>12} {'df':>6} {'p_asym':>10} {'p_finite':>10}"
    click.echo(header)
    rows = []
    for res in results:
        click.echo(
            f"{model.label():<16} {res.order:>5} {res.statistic:>12.4f} "
            f"{res.df:>6} {res.p_asymptotic:>10.4g} {res.p_finite:>10.4g}"
        )
        rows.append(
            {
                "model": model.label(),
                "order": res.order,
                "statistic": res.statistic,
                "df": res.df,
                "p_asymptotic": res.p_asymptotic,
                "p_finite": res.p_finite,
                "n": res.sample_size,
                "config_hash": config_hash(
                    {"command": "feasibility", "test_id": test_id,
                     "model": json.loads(model.to_json()), "order": order}
                ),
                "seed": seed,
            }
        )
    click.echo(
        "note: p_finite is a conservative finite-sample bound; "
        "p_asymptotic uses the chi-square approximation"
    )
    if out is not None:
        out_path = _out_dir(out)
        csv_path = out_path / "feasibility.csv"
        _write_csv(
            csv_path,
            ["model", "order", "statistic", "df", "p_asymptotic", "p_finite", "n",
             "config_hash", "seed"],
            rows,
        )
        click.echo(f"wrote {csv_path}")


# ---- convert / evaluate ----


def _branch_from_config(cfg: dict, section_name: str, data_path, cells, r_bins, nodes, options):
    """Build one instrument branch from a fit file or by fitting records."""
    section = cfg.get(section_name)
    if section is None:
        raise ConfigError(f"missing {section_name!r} section in config")
    if "fit" in section and section["fit"]:
        model, fit_nodes, fit_cells, latents = _load_fit(section["fit"])
        r_from_fit = next(iter(latents.values())).bins
        disc = discretize(model, r_from_fit, fit_nodes)
        return section.get("test_id"), FittedBranch(disc, latents), fit_cells
    test_id = section.get("test_id")
    if test_id is None:
        raise ConfigError(f"{section_name} section needs a test_id (or a fit path)")
    if data_path is None:
        raise ConfigError(f"{section_name} section has no fit path and no data file is set")
    model = _parse_model(_require(section, "model"))
    mu = float(section.get("mu", 0.01))
    records = _records_for_test(data_path, test_id)
    disc, latents = _fit_branch(records, model, mu, cells, r_bins, nodes, options)
    return test_id, FittedBranch(disc, latents), cells


def _conversion_from_config(cfg, data_path, r_bins, nodes, options):
    cells = _parse_cells(cfg)
    src_test, source, src_cells = _branch_from_config(
        cfg, "source", data_path, cells, r_bins, nodes, options
    )
    tgt_test, target, _ = _branch_from_config(
        cfg, "target", data_path, cells, r_bins, nodes, options
    )
    cells = cells if cells is not None else src_cells
    return src_test, tgt_test, ConversionModel(source=source, target=target, cells=cells)


@main.command(name="convert")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Output directory.")
@click.option("--data", "data_path", type=click.Path(), default=None)
@click.option("--scores", "scores_path", type=click.Path(), default=None,
              help="Records CSV with source scores to convert.")
@click.option("--draws", type=int, default=None, help="Samples per record (default 0).")
@_guarded
def convert_command(config_path, seed, out, data_path, scores_path, draws):
    """Convert source-instrument scores to target-score distributions (JSONL)."""
    cfg = _load_config(config_path)
    data_path = data_path if data_path is not None else cfg.get("data")
    scores_path = scores_path if scores_path is not None else cfg.get("scores")
    draws = int(cfg.get("draws", 0) if draws is None else draws)
    if draws < 0:
        raise ConfigError("draws must be >= 0")
    r_bins = int(cfg.get("R", 1000))
    nodes = int(cfg.get("nodes_per_bin", DEFAULT_NODES_PER_BIN))
    options = _fit_options(cfg)

    src_test, _, conv = _conversion_from_config(cfg, data_path, r_bins, nodes, options)
    if scores_path is not None:
        if src_test is not None:
            to_convert = _records_for_test(scores_path, src_test)
        else:
            to_convert = read_records(scores_path)
    else:
        if data_path is None or src_test is None:
            raise ConfigError("need a scores file, or a data file plus source test_id")
        to_convert = _records_for_test(data_path, src_test)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    matrices: dict = {}
    out_path = _out_dir(out)
    jsonl_path = out_path / "convert.jsonl"
    n_scores = conv.source.n_scores
    with open(jsonl_path, "w", encoding="utf-8") as f:
        for rec in to_convert:
            if not 0 <= rec.score < n_scores:
                raise DataError(
                    f"score {rec.score} outside the source support (subject {rec.subject_id})"
                )
            cell = assign_cell(conv.cells, rec.group, rec.age)
            key = None if cell is None else cell.key()
            if key not in matrices:
                matrices[key] = conversion_matrix(conv, key)
            pmf_z = matrices[key][rec.score]
            samples = (
                conversion_sample(rec.score, key, conv, draws, rng) if draws else []
            )
            f.write(
                json.dumps(
                    {
                        "subject_id": rec.subject_id,
                        "y": int(rec.score),
                        "cell": "all" if cell is None else cell.label(),
                        "pmf_z": [float(p) for p in pmf_z],
                        "samples": [int(s) for s in samples],
                    }
                )
                + "\n"
            )
    click.echo(f"wrote {jsonl_path} ({len(to_convert)} records)")


def _read_crosswalk(path) -> list:
    import csv

    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"crosswalk file not found: {path}")
    with f:
        reader = csv.DictReader(f)
        required = {"subject_id", "y", "z"}
        fields = set(reader.fieldnames or ())
        if not required <= fields:
            raise DataError(
                f"crosswalk file {path} must have columns subject_id,y,z "
                f"(got {sorted(fields)})"
            )
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                out.append(
                    CrosswalkRecord(
                        subject_id=row["subject_id"],
                        y=int(row["y"]),
                        z=int(row["z"]),
                        age=float(row.get("age") or 0.0),
                        group=row.get("group") or "",
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path} line {i}: {exc}")
    if not out:
        raise DataError(f"crosswalk file {path} has no rows")
    return out


def _matrix_cross_entropy(records, matrix) -> CrossEntropyResult:
    total, zeros = 0.0, []
    for rec in records:
        p = matrix[rec.y, rec.z]
        if p <= 0.0:
            zeros.append(rec.subject_id)
        else:
            total += -float(np.log(p))
    value = float("inf") if zeros else total / len(records)
    return CrossEntropyResult(value=value, count=len(records), zero_records=zeros)


@main.command(name="evaluate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=None, help="Optional output directory for the CSV.")
@click.option("--data", "data_path", type=click.Path(), default=None)
@click.option("--crosswalk", "crosswalk_path", type=click.Path(), default=None)
@_guarded
def evaluate_command(config_path, seed, out, data_path, crosswalk_path):
    """Score conversions on a crosswalk sample (both instruments observed)."""
    cfg = _load_config(config_path)
    data_path = data_path if data_path is not None else cfg.get("data")
    crosswalk_path = _require(cfg, "crosswalk", crosswalk_path)
    r_bins = int(cfg.get("R", 1000))
    nodes = int(cfg.get("nodes_per_bin", DEFAULT_NODES_PER_BIN))
    options = _fit_options(cfg)

    src_test, tgt_test, conv = _conversion_from_config(cfg, data_path, r_bins, nodes, options)
    crosswalk = _read_crosswalk(crosswalk_path)
    results = [("nonparametric", sample_cross_entropy(crosswalk, conv))]

    n_src = conv.source.n_scores
    n_tgt = conv.target.n_scores
    if data_path is not None and src_test is not None and tgt_test is not None:
        src_records = first_visits(_records_for_test(data_path, src_test))
        tgt_records = first_visits(_records_for_test(data_path, tgt_test))
        y_scores = np.asarray([r.score for r in src_records])
        z_scores = np.asarray([r.score for r in tgt_records])

        ln_y = fit_logit_normal(y_scores, np.ones((y_scores.size, 1)), conv.source.disc.model)
        ln_z = fit_logit_normal(z_scores, np.ones((z_scores.size, 1)), conv.target.disc.model)
        ln_conv = ConversionModel(
            source=FittedBranch(
                conv.source.disc, {None: logit_normal_binned(ln_y, [1.0], r_bins, nodes)}
            ),
            target=FittedBranch(
                conv.target.disc, {None: logit_normal_binned(ln_z, [1.0], r_bins, nodes)}
            ),
        )
        ln_records = [
            CrosswalkRecord(r.subject_id, r.y, r.z, age=0.0, group="") for r in crosswalk
        ]
        results.append(("logit_normal", sample_cross_entropy(ln_records, ln_conv)))

        zs = fit_zscore(y_scores, z_scores)
        zs_matrix = zscore_matrix(zs, n_src - 1, n_tgt - 1)
        results.append(("zscore", _matrix_cross_entropy(crosswalk, zs_matrix)))
    else:
        click.echo("note: baselines skipped (need a data file with both instruments)")

    click.echo(f"{'method':<16} {'sample_ce':>12} {'count':>7} {'zeros':>6}")
    rows = []
    for method, res in results:
        ce_text = "inf" if not np.isfinite(res.value) else f"{res.value:.6f}"
        click.echo(f"{method:<16} {ce_text:>12} {res.count:>7} {len(res.zero_records):>6}")
        rows.append(
            {
                "method": method,
                "sample_ce": res.value,
                "count": res.count,
                "zeros": len(res.zero_records),
                "seed": seed,
            }
        )
    if out is not None:
        out_path = _out_dir(out)
        csv_path = out_path / "evaluate.csv"
        _write_csv(csv_path, ["method", "sample_ce", "count", "zeros", "seed"], rows)
        click.echo(f"wrote {csv_path}")


# ---- experiment ----


@main.command(name="experiment")
@click.argument("name", type=click.Choice(EXPERIMENTS))
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default=".", show_default=True, help="Output directory.")
@click.option("--threads", type=int, default=None, help="Parallel workers.")
@_guarded
def experiment_command(name, config_path, seed, out, threads):
    """Run one named synthetic experiment and write its CSV tables."""
    cfg = _load_config(config_path)
    report = run_experiment(name, cfg, out_dir=out, seed=seed, threads=threads)
    click.echo(f"experiment {report.name}: config_hash={report.config_hash} seed={report.seed}")
    for path in report.paths:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
