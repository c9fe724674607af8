"""Command-line entry point for reproducible generate/train/evaluate runs.

Every command writes its artifacts into ``--out`` together with a
``manifest.json`` recording the command, the effective configuration, seeds,
input/output SHA-256 hashes, and wall-clock time. Runs with identical inputs
and seeds produce byte-identical artifacts and manifests (modulo the
wall-clock entry).

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
import time
from dataclasses import dataclass, fields as dc_fields, replace
from pathlib import Path

import numpy as np

from . import estimation, evaluation, pipeline, synth
from .errors import ConfigurationError, ContractError, InputError, NumericalError
from .estimation import TrainConfig
from .fluids import PhysicalConstants
from .hybrid import VARIANTS, HybridModel, Standardization, build

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


@dataclass(frozen=True)
class RunSettings:
    """Flat run configuration: training protocol plus pipeline and model knobs."""

    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 5000
    patience: int = 50
    repetitions: int = 5
    seed: int = 0
    mape_alpha: float = 0.1
    validation_fraction: float = 0.2
    chunk_days: float = 14.0
    clip_norm: float = 1e3
    widths: str = "100,100,100"
    window_hours: float = 1.0
    steady_tolerance: float = 0.02
    test_span_days: float = 90.0
    pretrain: int = 1
    pretrain_samples: int = 10000
    pretrain_epochs: int = 400
    pretrain_learning_rate: float = 3e-3

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            repetitions=self.repetitions,
            seed=self.seed,
            mape_alpha=self.mape_alpha,
            validation_fraction=self.validation_fraction,
            chunk_days=self.chunk_days,
            clip_norm=self.clip_norm,
        )

    def width_tuple(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self.widths.split(",") if w.strip())


def load_settings(path: str | None, overrides: dict) -> RunSettings:
    """Read ``key = value`` settings; explicit flags override file values."""
    values: dict = {}
    known = {f.name: f for f in dc_fields(RunSettings)}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ConfigurationError(f"{path}:{line_no}: expected 'key = value'")
                key, raw = (p.strip() for p in text.split("=", 1))
                if key not in known:
                    raise ConfigurationError(f"{path}:{line_no}: unknown setting {key!r}")
                default = getattr(RunSettings(), key)
                if isinstance(default, str):
                    values[key] = raw.strip("'\"")
                elif isinstance(default, int):
                    values[key] = int(raw)
                else:
                    values[key] = float(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunSettings(**values)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Manifest:
    def __init__(self, command: str, config_path: str | None, settings: dict, seeds: list[int]):
        self.record = {
            "command": command,
            "config_path": config_path,
            "effective_config": settings,
            "seeds": seeds,
            "inputs": {},
            "outputs": {},
            "wall_clock_seconds": None,
        }
        self._start = time.monotonic()

    def add_input(self, path) -> None:
        self.record["inputs"][str(path)] = _sha256(Path(path))

    def add_output(self, path) -> None:
        self.record["outputs"][str(path)] = _sha256(Path(path))

    def write(self, out_dir: Path) -> Path:
        self.record["wall_clock_seconds"] = time.monotonic() - self._start
        path = out_dir / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.record, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _settings_dict(settings: RunSettings) -> dict:
    return {f.name: getattr(settings, f.name) for f in dc_fields(RunSettings)}


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    scenario = synth.load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    out = _out_dir(args)
    manifest = Manifest("generate", args.scenario, {"seed": scenario.seed}, [scenario.seed])
    manifest.add_input(args.scenario)
    measured, _ = synth.simulate(scenario)
    csv_path = out / "dataset.csv"
    pipeline.write_csv(measured, csv_path)
    manifest.add_output(csv_path)
    manifest.write(out)
    print(f"wrote {csv_path} ({len(measured['timestamp'])} samples)")
    return EXIT_OK


def _prepare_dataset(data_path: str, settings: RunSettings, well_id: str) -> pipeline.WellDataset:
    dataset, _ = pipeline.prepare_well(
        data_path,
        well_id,
        window_seconds=settings.window_hours * 3600.0,
        tolerance=settings.steady_tolerance,
        constants=PhysicalConstants(),
    )
    return pipeline.split(
        dataset,
        test_span_days=settings.test_span_days,
        validation_fraction=settings.validation_fraction,
        chunk_days=settings.chunk_days,
        seed=settings.seed,
    )


def train_variant(
    dataset: pipeline.WellDataset, variant: str, settings: RunSettings
) -> tuple[HybridModel, estimation.TrainingReport]:
    """Build, optionally pretrain, and fit one variant on a prepared dataset."""
    region = dataset.partition != "test"
    cols = pipeline.subset_columns(dataset.model_columns(), np.flatnonzero(region))
    y = dataset.columns["q_o"][region]
    stats = Standardization.from_columns(cols)
    model = build(
        variant,
        estimation.default_physical_priors(),
        seed=settings.seed,
        stats=stats,
        widths=settings.width_tuple(),
        y_scale=float(np.abs(y).mean()) if y.size else 1.0,
    )
    if settings.pretrain and model.variant.pretrainable:
        estimation.pretrain_network(
            model,
            settings.seed,
            n_samples=settings.pretrain_samples,
            epochs=settings.pretrain_epochs,
            learning_rate=settings.pretrain_learning_rate,
        )
    report = estimation.fit(model, dataset, settings.train_config())
    return model, report


def _train_task(payload) -> dict:
    dataset, variant, settings, out = payload
    model, report = train_variant(dataset, variant, settings)
    model_path = Path(out) / f"model_{variant}.json"
    report_path = Path(out) / f"training_report_{variant}.txt"
    model.save(model_path)
    report.write(report_path)
    return {"variant": variant, "model": str(model_path), "report": str(report_path)}


def cmd_train(args) -> int:
    settings = load_settings(args.config, {"seed": args.seed})
    variants = [v.strip() for v in args.variant.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigurationError(f"unknown variant {v!r}; valid tags: {', '.join(VARIANTS)}")
    out = _out_dir(args)
    manifest = Manifest("train", args.config, _settings_dict(settings), [settings.seed])
    manifest.add_input(args.data)

    dataset = _prepare_dataset(args.data, settings, args.well_id)
    tasks = [(dataset, v, settings, str(out)) for v in variants]
    if args.workers > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_train_task, tasks))
    else:
        results = [_train_task(t) for t in tasks]
    for result in sorted(results, key=lambda r: r["variant"]):
        manifest.add_output(result["model"])
        manifest.add_output(result["report"])
        print(f"trained {result['variant']} -> {result['model']}")
    manifest.write(out)
    return EXIT_OK


def cmd_predict(args) -> int:
    settings = load_settings(args.config, {"seed": args.seed})
    model = HybridModel.load(args.model)
    out = _out_dir(args)
    manifest = Manifest("predict", args.config, _settings_dict(settings), [settings.seed])
    manifest.add_input(args.model)
    manifest.add_input(args.data)
    dataset, _ = pipeline.prepare_well(
        args.data,
        args.well_id,
        window_seconds=settings.window_hours * 3600.0,
        tolerance=settings.steady_tolerance,
    )
    pred = model.predict(dataset.model_columns())
    path = out / "predictions.csv"
    rows = ["timestamp,qo_pred_m3s,qo_meas_m3s"]
    for i in range(dataset.n):
        rows.append(
            f"{pipeline.format_timestamp(float(dataset.columns['timestamp'][i]))},"
            f"{float(pred[i])!r},{float(dataset.columns['q_o'][i])!r}"
        )
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    manifest.add_output(path)
    manifest.write(out)
    print(f"wrote {path}")
    return EXIT_OK


def _load_models(paths) -> dict[str, HybridModel]:
    models = {}
    for path in paths:
        model = HybridModel.load(path)
        models[model.variant.tag] = model
    return models


def cmd_evaluate(args) -> int:
    settings = load_settings(args.config, {"seed": args.seed})
    out = _out_dir(args)
    manifest = Manifest("evaluate", args.config, _settings_dict(settings), [settings.seed])
    models = _load_models(args.models)
    for path in args.models:
        manifest.add_input(path)
    manifest.add_input(args.data)
    dataset = _prepare_dataset(args.data, settings, args.well_id)

    horizons = [float(h) for h in args.horizons.split(",")] if args.horizons else [None]
    summary_lines = []
    for tag in sorted(models):
        for horizon in horizons:
            report = evaluation.evaluate_model(models[tag], [dataset], horizon_days=horizon)
            text_path = out / (
                f"evaluation_{tag}.txt" if horizon is None else f"evaluation_{tag}_{horizon:g}d.txt"
            )
            text_path.write_text(report.to_text(), encoding="utf-8")
            curve_path = out / (
                f"curve_{tag}.csv" if horizon is None else f"curve_{tag}_{horizon:g}d.csv"
            )
            curve_path.write_text(report.curve_csv(), encoding="utf-8")
            manifest.add_output(text_path)
            manifest.add_output(curve_path)
            label = "full" if horizon is None else f"{horizon:g}d"
            summary_lines.append(f"{tag} {label} mape {report.median_mape!r}")
    matrix, names = evaluation.correlation_matrix(dataset)
    corr_path = out / "correlation.csv"
    corr_path.write_text(evaluation.correlation_csv(matrix, names), encoding="utf-8")
    manifest.add_output(corr_path)
    summary_path = out / "summary.txt"
    summary_path.write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    manifest.add_output(summary_path)
    manifest.write(out)
    print("\n".join(summary_lines))
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    settings = load_settings(args.config, {"seed": args.seed})
    out = _out_dir(args)
    manifest = Manifest("sensitivity", args.config, _settings_dict(settings), [settings.seed])
    models = _load_models(args.models)
    for path in args.models:
        manifest.add_input(path)
    manifest.add_input(args.data)
    dataset = _prepare_dataset(args.data, settings, args.well_id)
    lines = []
    for tag in sorted(models):
        for variable in ("u", "p1"):
            result = evaluation.sensitivity_sweep(
                models[tag], dataset, variable, n_base=args.base_points, seed=settings.seed
            )
            path = out / f"sweep_{tag}_{variable}.csv"
            path.write_text(result.to_csv(), encoding="utf-8")
            manifest.add_output(path)
            lines.append(f"{tag} {variable} violations {result.total_violations}")
    summary_path = out / "sensitivity_summary.txt"
    summary_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest.add_output(summary_path)
    manifest.write(out)
    print("\n".join(lines))
    return EXIT_OK


def cmd_consistency(args) -> int:
    settings = load_settings(args.config, {"seed": args.seed})
    out = _out_dir(args)
    manifest = Manifest("consistency", args.config, _settings_dict(settings), [settings.seed])
    for path in args.models:
        manifest.add_input(path)
    for path in args.models:
        model = HybridModel.load(path)
        trace = model.subfunction_trace()
        csv_path = out / f"subfunction_{model.variant.tag}.csv"
        rows = [f"{trace['sweep']},network,reference"]
        for x, g, ref in zip(trace["input"], trace["network"], trace["reference"]):
            rows.append(f"{float(x)!r},{float(g)!r},{float(ref)!r}")
        csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        manifest.add_output(csv_path)
        print(f"wrote {csv_path}")
    manifest.write(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chokevfm", description="Gray-box virtual flow metering toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--config", default=None, help="key = value settings file")
        p.add_argument("--workers", type=int, default=1, help="parallel worker count")
        p.add_argument("--well-id", default="well", help="well identifier for reports")

    p = sub.add_parser("generate", help="simulate a synthetic well history")
    p.add_argument("scenario", help="scenario file")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train model variant(s) on a well CSV")
    p.add_argument("data", help="well CSV")
    p.add_argument("--variant", required=True, help="comma-separated variant tags")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict oil rates with a trained model")
    p.add_argument("model", help="model archive")
    p.add_argument("data", help="well CSV")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score trained models on a well CSV")
    p.add_argument("data", help="well CSV")
    p.add_argument("models", nargs="+", help="model archives")
    p.add_argument("--horizons", default=None, help="comma-separated horizons in days")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sensitivity", help="monotonicity sweeps around test points")
    p.add_argument("data", help="well CSV")
    p.add_argument("models", nargs="+", help="model archives")
    p.add_argument("--base-points", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("consistency", help="extract learned subfunction traces")
    p.add_argument("models", nargs="+", help="model archives")
    common(p)
    p.set_defaults(func=cmd_consistency)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
