"""Orchestration for dataset generation, database builds, evaluations,
and the ablation grids. Every run writes a records.json plus a resolved
config echo into its output directory; export-csv flattens records into
long-format tables.

The evaluation path is read-only on its inputs: evaluation and ablation
commands write exclusively under their configured out_dir.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics, formats
from .config import ExperimentConfig, solver_config_from
from .encoders import EncoderSpec, PcaModel, fit_pca, load_latents
from .errors import ConfigError
from .relay import (RelayDatabase, RolloutConfig, build_database, nearest,
                    persistence_rollout, relay_rollout)
from .solver import SolverConfig, Trajectory, generate_trajectories


# ---------------------------------------------------------------- generate

def _generate_block(args):
    values, seeds, ids, n_frames = args
    configs = [solver_config_from(values, seed) for seed in seeds]
    trajectories = generate_trajectories(configs, n_frames, ids)
    return [(t.trajectory_id, t.config.seed, t) for t in trajectories]


def run_generate(cfg: ExperimentConfig):
    """Generate a regime's trajectory files plus the manifest."""
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    n = cfg["n_trajectories"]
    start = cfg["trajectory_start"]
    ids = list(range(start, start + n))
    seeds = [cfg["base_seed"] + i for i in range(n)]
    block = max(1, cfg["block_size"])
    tasks = [(cfg.values, seeds[i:i + block], ids[i:i + block], cfg["n_frames"])
             for i in range(0, n, block)]

    entries = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_generate_block, tasks))
    else:
        results = [_generate_block(task) for task in tasks]
    for block_result in results:
        for tid, seed, trajectory in block_result:
            name = f"traj_{tid:05d}.vrt1"
            formats.write_trajectory(trajectory, out_dir / name)
            entries.append((tid, seed, name))
    entries.sort()
    formats.write_manifest(out_dir / "manifest.tsv", entries)
    cfg.write_echo(out_dir)
    return out_dir / "manifest.tsv"


# ------------------------------------------------------------ data loading

def load_trajectories(manifest_path, expected_nu=None, limit=None):
    entries = formats.read_manifest(manifest_path)
    if limit is not None:
        entries = entries[:limit]
    out = []
    for tid, _seed, path in entries:
        trajectory = formats.read_trajectory(path, trajectory_id=tid)
        if expected_nu is not None and trajectory.config.nu != expected_nu:
            raise ConfigError(
                f"{path}: nu={trajectory.config.nu:g} but this command "
                f"expects nu={expected_nu:g}")
        out.append(trajectory)
    if not out:
        raise ConfigError(f"manifest {manifest_path} lists no trajectories")
    return out


def _atomic_savez(path, **arrays):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    with open(tmp, "wb") as handle:
        np.savez(handle, **arrays)
    os.replace(tmp, path)


def save_pca(model: PcaModel, path):
    _atomic_savez(path, mean=model.mean, components=model.components,
                  explained_variance=model.explained_variance,
                  total_variance=model.total_variance,
                  rank_deficient=model.rank_deficient)


def load_pca(path) -> PcaModel:
    data = np.load(path)
    return PcaModel(mean=data["mean"], components=data["components"],
                    explained_variance=data["explained_variance"],
                    total_variance=float(data["total_variance"]),
                    rank_deficient=bool(data["rank_deficient"]))


def save_database(db: RelayDatabase, path):
    _atomic_savez(path, encoded=db.encoded, deltas=db.deltas,
                  next_frames=db.next_frames, provenance=db.provenance,
                  successor=db.successor, history_length=db.history_length)


def load_database(path) -> RelayDatabase:
    data = np.load(path)
    return RelayDatabase(encoded=data["encoded"], deltas=data["deltas"],
                         next_frames=data["next_frames"],
                         provenance=data["provenance"],
                         successor=data["successor"],
                         history_length=int(data["history_length"]))


def run_pca_fit(cfg: ExperimentConfig):
    trajectories = load_trajectories(cfg["manifest"], cfg.get("expected_nu"))
    lo, hi = cfg["frame_lo"], cfg["frame_hi"]
    samples = np.concatenate([t.frames[lo:hi + 1] for t in trajectories])
    model = fit_pca(samples, cfg["n_components"])
    out_path = Path(cfg["out_path"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_pca(model, out_path)
    cfg.write_echo(out_path.parent)
    return out_path


def _encoder_from(kind, pca_model=None, latents=None):
    if kind == "pca":
        return EncoderSpec(kind="pca", pca_model=pca_model)
    if kind == "raw":
        return EncoderSpec(kind="raw")
    if kind == "external":
        return EncoderSpec(kind="external", latent_source=latents)
    raise ConfigError(f"unknown encoder {kind!r}")


def run_db_build(cfg: ExperimentConfig):
    trajectories = load_trajectories(cfg["manifest"], cfg.get("expected_nu"))
    kind = cfg["encoder"]
    pca_model = load_pca(cfg["pca_model"]) if kind == "pca" else None
    latents = load_latents(cfg["latents"]) if kind == "external" else None
    if kind == "pca" and cfg.get("pca_model") is None:
        raise ConfigError("encoder=pca requires pca_model")
    spec = _encoder_from(kind, pca_model, latents)
    db = build_database(trajectories, spec, cfg["frame_lo"], cfg["frame_hi"],
                        history_length=cfg["history_length"])
    out_path = Path(cfg["out_path"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_database(db, out_path)
    cfg.write_echo(out_path.parent)
    return out_path


# ------------------------------------------------------------- evaluation

@dataclass
class EvalData:
    """Shared inputs of one evaluation: source DBs are built lazily."""

    source: list
    evals: list
    cfg: ExperimentConfig

    def __post_init__(self):
        self._dbs = {}
        self._pca = None

    @property
    def pca_model(self):
        if self._pca is None:
            lo, hi = self.cfg["frame_lo"], self.cfg["frame_hi"]
            samples = np.concatenate([t.frames[lo:hi + 1] for t in self.source])
            self._pca = fit_pca(samples, self.cfg["pca_components"])
        return self._pca

    def encoder(self, kind):
        if kind == "pca":
            return EncoderSpec(kind="pca", pca_model=self.pca_model)
        if kind == "raw":
            return EncoderSpec(kind="raw")
        path = self.cfg.get("latents")
        if path is None:
            raise ConfigError("external encoder requires `latents`")
        return EncoderSpec(kind="external", latent_source=load_latents(path))

    def query_encoder(self, kind):
        if kind != "external":
            return self.encoder(kind)
        path = self.cfg.get("eval_latents") or self.cfg.get("latents")
        return EncoderSpec(kind="external", latent_source=load_latents(path))

    def database(self, kind, history_length=1, n_source=None):
        key = (kind, history_length, n_source)
        if key not in self._dbs:
            subset = self.source if n_source is None else self.source[:n_source]
            self._dbs[key] = build_database(
                subset, self.encoder(kind), self.cfg["frame_lo"],
                self.cfg["frame_hi"], history_length=history_length)
        return self._dbs[key]

    def context_and_truth(self, horizon):
        c = self.cfg["context_frames"]
        contexts, truths = [], []
        for t in self.evals:
            if t.n_frames < c + horizon:
                raise ConfigError(
                    f"evaluation trajectory {t.trajectory_id} has "
                    f"{t.n_frames} frames; need {c + horizon}")
            contexts.append(t.frames[:c].astype(np.float64))
            truths.append(t.frames[c:c + horizon].astype(np.float64))
        return contexts, truths

    @property
    def regime(self):
        return f"nu={self.evals[0].config.nu:g}"


def load_eval_data(cfg: ExperimentConfig) -> EvalData:
    source = load_trajectories(cfg["source_manifest"],
                               cfg.get("expected_source_nu"))
    evals = load_trajectories(cfg["eval_manifest"], cfg.get("expected_eval_nu"))
    return EvalData(source=source, evals=evals, cfg=cfg)


def _matched_stats(results):
    indices = np.concatenate([r.matched_indices for r in results])
    forced = sum(len(r.forced_rematch_steps) for r in results)
    values, counts = np.unique(indices, return_counts=True)
    top = int(np.argmax(counts))
    return {"total": int(indices.size), "unique": int(values.size),
            "forced_rematches": int(forced),
            "top_index": int(values[top]), "top_count": int(counts[top])}


def run_method(data: EvalData, label, horizon, ride_length=None, alpha=None,
               update_rule="delta", kind="pca", oracle_matching=False,
               oracle_magnitude=False, history_length=1, oracle_history=False,
               n_source=None):
    """Roll one method over every evaluation trajectory."""
    cfg = data.cfg
    contexts, truths = data.context_and_truth(horizon)
    if label == "persistence":
        preds = [persistence_rollout(ctx, horizon) for ctx in contexts]
        return {"label": label, "predictions": np.asarray(preds),
                "truths": np.asarray(truths), "results": None}
    roll = RolloutConfig(
        horizon=horizon,
        ride_length=cfg["ride_length"] if ride_length is None else ride_length,
        update_rule=update_rule,
        alpha=cfg["alpha"] if alpha is None else alpha,
        oracle_matching=oracle_matching, oracle_magnitude=oracle_magnitude,
        history_length=history_length, oracle_history=oracle_history)
    db = data.database(kind, history_length=history_length, n_source=n_source)
    spec = data.query_encoder(kind)
    results = []
    for trajectory, ctx, truth in zip(data.evals, contexts, truths):
        results.append(relay_rollout(
            ctx, db, spec, roll,
            truth=truth if (roll.needs_truth or kind == "external") else None,
            query_provenance=(trajectory.trajectory_id, 0)))
    preds = np.asarray([r.predictions for r in results])
    return {"label": label, "predictions": preds,
            "truths": np.asarray(truths), "results": results}


def _record(data: EvalData, run, extras=None):
    cfg = data.cfg
    report = diagnostics.relative_l2(run["predictions"], run["truths"])
    lo, hi = diagnostics.bootstrap_ci(report.per_trajectory_means,
                                      cfg["bootstrap_samples"],
                                      cfg["bootstrap_level"],
                                      seed=cfg["bootstrap_seed"])
    record = {
        "method": run["label"],
        "regime": data.regime,
        "horizon": int(run["predictions"].shape[1]),
        "mean_error": report.mean,
        "ci": [lo, hi],
        "per_step": report.per_step.tolist(),
        "config_hash": cfg.config_hash(),
    }
    if run["results"] is not None:
        record["matched_stats"] = _matched_stats(run["results"])
    if extras:
        record.update(extras)
    return record


def _true_deltas(contexts, truths):
    out = []
    for ctx, truth in zip(contexts, truths):
        out.append(np.diff(np.concatenate([ctx[-1][None], truth]), axis=0))
    return np.asarray(out)


def _cosine_rows(data: EvalData, run, label):
    cfg = data.cfg
    contexts, truths = data.context_and_truth(run["predictions"].shape[1])
    borrowed = np.asarray([r.borrowed_deltas for r in run["results"]])
    actual = _true_deltas(contexts, truths)
    per_step, undefined, per_traj = diagnostics.dynamics_cosine_profile(
        borrowed, actual)
    rows = []
    for step in range(per_step.shape[0]):
        vals = per_traj[:, step]
        vals = vals[np.isfinite(vals)]
        if vals.size:
            lo, hi = diagnostics.bootstrap_ci(
                vals, cfg["bootstrap_samples"], cfg["bootstrap_level"],
                seed=cfg["bootstrap_seed"])
        else:
            lo = hi = float("nan")
        rows.append({"method": label, "step": step + 1,
                     "value": float(per_step[step]), "lo": lo, "hi": hi,
                     "undefined": int(undefined[step])})
    return rows


def _spectral_rows(data: EvalData, run, label):
    """Wavenumber-resolved relative error at the final rollout step."""
    cfg = data.cfg
    preds = run["predictions"][:, -1]
    truths = run["truths"][:, -1]
    profiles = np.asarray([diagnostics.spectral_relative_error(p, t).values
                           for p, t in zip(preds, truths)])
    rows = []
    for shell in range(profiles.shape[1]):
        vals = profiles[:, shell]
        vals = vals[np.isfinite(vals)]
        if not vals.size:
            continue
        lo, hi = diagnostics.bootstrap_ci(vals, cfg["bootstrap_samples"],
                                          cfg["bootstrap_level"],
                                          seed=cfg["bootstrap_seed"])
        rows.append({"method": label, "shell": shell,
                     "value": float(vals.mean()), "lo": lo, "hi": hi})
    return rows


def _spectrum_ratio_rows(data: EvalData, run, label):
    """Enstrophy spectrum ratio at the final step, mean spectra then ratio."""
    preds = run["predictions"][:, -1]
    truths = run["truths"][:, -1]
    pred_mean = np.mean([diagnostics.enstrophy_spectrum(p).values
                         for p in preds], axis=0)
    true_mean = np.mean([diagnostics.enstrophy_spectrum(t).values
                         for t in truths], axis=0)
    rows = []
    for shell, (num, den) in enumerate(zip(pred_mean, true_mean)):
        value = float(num / den) if den > 0 else float("nan")
        rows.append({"method": label, "shell": shell, "value": value,
                     "lo": float("nan"), "hi": float("nan")})
    return rows


def _write_records(cfg: ExperimentConfig, records, figures=None):
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": cfg.command,
        "config_hash": cfg.config_hash(),
        "records": records,
        "figures": figures or {},
    }
    formats.atomic_write_text(out_dir / "records.json",
                              json.dumps(payload, indent=2, sort_keys=True))
    cfg.write_echo(out_dir)
    return out_dir / "records.json"


METHOD_TABLE = {
    "persistence": {},
    "pca-relay": {"kind": "pca", "update_rule": "delta"},
    "pca-copy": {"kind": "pca", "update_rule": "copy"},
    "raw-relay": {"kind": "raw", "update_rule": "delta"},
    "knn-copy": {"kind": "raw", "update_rule": "copy"},
    "external-relay": {"kind": "external", "update_rule": "delta",
                       "oracle_matching": True},
}


def run_evaluate(cfg: ExperimentConfig):
    """Methods-by-regime grid with per-step diagnostics for the figures."""
    data = load_eval_data(cfg)
    horizon = cfg["horizon"]
    records, cosine_rows, spectral_rows, ratio_rows = [], [], [], []
    for label in cfg["methods"]:
        if label not in METHOD_TABLE:
            raise ConfigError(f"unknown method {label!r}")
        run = run_method(data, label, horizon, **METHOD_TABLE[label])
        records.append(_record(data, run))
        spectral_rows.extend(_spectral_rows(data, run, label))
        ratio_rows.extend(_spectrum_ratio_rows(data, run, label))
        if run["results"] is not None and \
                METHOD_TABLE[label].get("update_rule", "delta") == "delta":
            cosine_rows.extend(_cosine_rows(data, run, label))
    return _write_records(cfg, records, {
        "fig2_cosine": cosine_rows,
        "fig3_spectral": spectral_rows,
        "figA3_spectrum_ratio": ratio_rows,
    })


def run_rollout(cfg: ExperimentConfig):
    """One method, one regime."""
    data = load_eval_data(cfg)
    label = cfg.get("method_label") or f"{cfg['encoder']}-{cfg['update_rule']}"
    run = run_method(
        data, label, cfg["horizon"], update_rule=cfg["update_rule"],
        kind=cfg["encoder"], oracle_matching=cfg["oracle_matching"],
        oracle_magnitude=cfg["oracle_magnitude"],
        history_length=cfg["history_length"],
        oracle_history=cfg["oracle_history"])
    records = [_record(data, run)]
    figures = {}
    if run["results"] is not None and cfg["update_rule"] == "delta":
        figures["fig2_cosine"] = _cosine_rows(data, run, label)
    return _write_records(cfg, records, figures)


def run_ablate_2x2(cfg: ExperimentConfig):
    """Matching space x update rule, plus the external row when supplied."""
    data = load_eval_data(cfg)
    grid = [("pca-relay", "pca", "delta"), ("pca-copy", "pca", "copy"),
            ("raw-relay", "raw", "delta"), ("knn-copy", "raw", "copy")]
    if cfg.get("latents") is not None:
        grid.append(("external-relay", "external", "delta"))
    records = []
    for label, kind, rule in grid:
        run = run_method(data, label, cfg["horizon"], update_rule=rule,
                         kind=kind,
                         oracle_matching=(kind == "external"))
        records.append(_record(data, run, extras={
            "matching_space": kind, "update_rule": rule}))
    return _write_records(cfg, records)


def run_ablate_oracle(cfg: ExperimentConfig):
    """standard / oracle-match / oracle-match + best alpha / oracle-magnitude."""
    data = load_eval_data(cfg)
    kind = cfg["encoder"]
    records = []
    run = run_method(data, "standard", cfg["horizon"], kind=kind)
    records.append(_record(data, run, extras={"variant": "standard"}))
    run = run_method(data, "oracle-match", cfg["horizon"], kind=kind,
                     oracle_matching=True)
    records.append(_record(data, run, extras={"variant": "oracle-match"}))
    best_alpha, best_record = None, None
    for alpha in cfg["alpha_grid"]:
        run = run_method(data, f"oracle-alpha-{alpha:g}", cfg["horizon"],
                         kind=kind, oracle_matching=True, alpha=alpha)
        record = _record(data, run, extras={"variant": "oracle-alpha",
                                            "alpha": alpha})
        records.append(record)
        if best_record is None or record["mean_error"] < best_record["mean_error"]:
            best_alpha, best_record = alpha, record
    best_record = dict(best_record)
    best_record["method"] = "oracle-alpha-best"
    best_record["variant"] = "oracle-alpha-best"
    best_record["alpha"] = best_alpha
    records.append(best_record)
    run = run_method(data, "oracle-magnitude", cfg["horizon"], kind=kind,
                     oracle_matching=True, oracle_magnitude=True)
    records.append(_record(data, run, extras={"variant": "oracle-magnitude"}))
    return _write_records(cfg, records)


def run_ablate_dbsize(cfg: ExperimentConfig):
    data = load_eval_data(cfg)
    records = []
    for size in cfg["subset_sizes"]:
        if size > len(data.source):
            raise ConfigError(f"subset size {size} exceeds available "
                              f"{len(data.source)} source trajectories")
        run = run_method(data, f"pca-relay-n{size}", cfg["horizon"],
                         n_source=size)
        records.append(_record(data, run, extras={"n_source": size}))
    return _write_records(cfg, records)


def run_ablate_ride(cfg: ExperimentConfig):
    data = load_eval_data(cfg)
    records = []
    for ride in cfg["ride_grid"]:
        run = run_method(data, f"pca-relay-ride{ride}", cfg["horizon"],
                         ride_length=ride)
        records.append(_record(data, run, extras={"ride_length": ride}))
    return _write_records(cfg, records)


def run_ablate_horizon(cfg: ExperimentConfig):
    data = load_eval_data(cfg)
    records = []
    for horizon in cfg["horizons"]:
        for label, kwargs in (("pca-relay", {}), ("persistence", {})):
            run = run_method(data, label, horizon, **kwargs)
            records.append(_record(data, run, extras={"eval_horizon": horizon}))
    return _write_records(cfg, records)


def run_ablate_history(cfg: ExperimentConfig):
    data = load_eval_data(cfg)
    h = cfg["history_length"]
    records = []
    run = run_method(data, "pca-relay", cfg["horizon"])
    records.append(_record(data, run, extras={"variant": "single-frame"}))
    run = run_method(data, f"history-{h}-predicted", cfg["horizon"],
                     history_length=h)
    records.append(_record(data, run, extras={"variant": "predicted-history"}))
    run = run_method(data, f"history-{h}-oracle", cfg["horizon"],
                     history_length=h, oracle_history=True)
    records.append(_record(data, run, extras={"variant": "oracle-history"}))
    return _write_records(cfg, records)


def run_export_csv(cfg: ExperimentConfig):
    """Flatten records.json files into one long-format CSV."""
    rows = []
    for spec in cfg["records"]:
        path = Path(spec)
        if path.is_dir():
            path = path / "records.json"
        payload = json.loads(path.read_text())
        config_hash = payload.get("config_hash", "")
        for record in payload.get("records", []):
            figure = {"evaluate": "table2", "ablate-2x2": "table3",
                      "ablate-oracle": "table4", "ablate-dbsize": "figA1a",
                      "ablate-horizon": "figA1b", "ablate-ride": "ride",
                      "ablate-history": "history",
                      "rollout": "rollout"}.get(payload.get("command"), "misc")
            rows.append((figure, record["method"], record.get("regime", ""),
                         "mean", record["mean_error"], record["ci"][0],
                         record["ci"][1], config_hash))
            for step, value in enumerate(record.get("per_step", []), start=1):
                rows.append((figure + "-steps", record["method"],
                             record.get("regime", ""), str(step), value,
                             "", "", config_hash))
        figures = payload.get("figures", {})
        for name, frows in figures.items():
            for row in frows:
                key = "step" if "step" in row else "shell"
                rows.append((name, row.get("method", ""), "",
                             str(row[key]), row["value"],
                             row.get("lo", ""), row.get("hi", ""),
                             config_hash))
    rows.sort(key=lambda r: tuple(str(x) for x in r))
    out_path = Path(cfg["out_path"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    header = "figure,method,regime,step_or_shell,value,lo,hi,config_hash"
    lines = [header] + [",".join(str(x) for x in row) for row in rows]
    formats.atomic_write_text(out_path, "\n".join(lines) + "\n")
    return out_path


RUNNERS = {
    "generate": run_generate,
    "pca-fit": run_pca_fit,
    "db-build": run_db_build,
    "rollout": run_rollout,
    "evaluate": run_evaluate,
    "ablate-2x2": run_ablate_2x2,
    "ablate-oracle": run_ablate_oracle,
    "ablate-dbsize": run_ablate_dbsize,
    "ablate-ride": run_ablate_ride,
    "ablate-horizon": run_ablate_horizon,
    "ablate-history": run_ablate_history,
    "export-csv": run_export_csv,
}


def run(command: str, cfg: ExperimentConfig):
    try:
        runner = RUNNERS[command]
    except KeyError:
        raise ConfigError(f"unknown command {command!r}") from None
    return runner(cfg)
