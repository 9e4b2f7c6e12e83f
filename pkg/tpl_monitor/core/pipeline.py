"""
Command orchestration for simulation, fitting, monitoring, evaluation and reporting.
Every command writes its outputs plus the effective configuration into one directory.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .dataset import DatasetGrid, load_dataset, save_dataset, summarize_grid
from .dimension_models import fit_grid, fit_param_trend, save_model_set
from .errors import (
    InsufficientDataError,
    MonitorError,
    ThresholdFailureError,
    UsageError,
)
from .evaluation import (
    evaluate_m1,
    evaluate_m2,
    evaluate_m3_same_group,
    evaluate_m3_unknown_group,
    null_calibration,
    same_group_trials,
    sample_size_sweep_m1,
    save_sweep_csv,
    verdict_grid,
)
from .method1 import grid_report_m1
from .method2 import PredictionMonitor, data_efficiency_sweep_m2, save_error_surface
from .method3 import (
    bootstrap_params,
    evaluation_cells,
    loo_thresholds,
    monitor_unknown_group_m3,
    save_model_json,
    test_same_group_m3,
)
from .models import (
    AccuracyRow,
    AccuracyTable,
    BootstrapDistribution,
    CellKey,
    DesignSpec,
    GridReport,
    MonitorVerdict,
    ProcessParams,
    ThresholdSet,
)
from .synthetic import (
    DEFAULT_OFFSETS,
    OffsetSpec,
    StatusProfile,
    default_profile,
    generate_grid,
    make_status_pair,
)
from ..config.run_config import RunConfig, save_config
from ..utils.helpers import format_duration, sub_seed

logger = logging.getLogger(__name__)

METHODS = ("m1", "m2-z", "m2-t2", "m3-same", "m3-unknown")
EVALUATION_PARTS = ("calibration", "m1", "m2", "m3-same", "m3-unknown")

CONFIG_FILENAME = "effective_config.yaml"


def _write_json(path: Path, data: Any) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
    return path


def _expected_change(reference: DatasetGrid, query: DatasetGrid) -> Optional[bool]:
    """Whether the statuses differ, when both grids carry status labels."""
    ref, qry = set(reference.status_labels), set(query.status_labels)
    if not ref or not qry:
        return None
    return ref != qry


class MonitoringPipeline:
    """Runs each CLI command against one effective configuration."""

    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig()
        logger.info(f"Pipeline initialized with seed {self.config.seed}, {self.config.workers} worker(s)")

    def _new_results(self, command: str, output_dir: Path) -> Dict[str, Any]:
        output_dir.mkdir(parents=True, exist_ok=True)
        config_file = save_config(self.config, output_dir / CONFIG_FILENAME)
        return {
            "command": command,
            "start_time": datetime.now().isoformat(),
            "success": False,
            "output_directory": str(output_dir),
            "saved_files": [str(config_file)],
            "errors": [],
        }

    def _finish(self, results: Dict[str, Any]) -> Dict[str, Any]:
        end = datetime.now()
        elapsed = (end - datetime.fromisoformat(results["start_time"])).total_seconds()
        results["success"] = True
        results["end_time"] = end.isoformat()
        results["elapsed"] = format_duration(elapsed)
        logger.info(f"{results['command']} completed in {results['elapsed']}; {len(results['saved_files'])} file(s) in {results['output_directory']}")
        return results

    def _load(self, path: Union[str, Path]) -> DatasetGrid:
        return load_dataset(path, self.config.data.columns, self.config.data.key_tolerance)

    # Simulation -------------------------------------------------------------

    def status_profiles(self) -> Tuple[StatusProfile, StatusProfile]:
        """Base and changed status from the simulation section."""
        sim = self.config.simulation
        base = default_profile()
        overrides = {k: v for k, v in (("sd_radius", sim.sd_radius), ("sd_height", sim.sd_height), ("rho", sim.rho)) if v is not None}
        if overrides:
            base = base.model_copy(update=overrides)
        if sim.offsets is not None:
            offsets = sim.offsets
        else:
            offsets = DEFAULT_OFFSETS if sim.preset == "default" else OffsetSpec()
        return make_status_pair(base, offsets, self._designs(), self._groups())

    def _designs(self) -> List[DesignSpec]:
        return [DesignSpec(design_dimension=d) for d in self.config.simulation.designs]

    def _groups(self) -> List[ProcessParams]:
        return [ProcessParams(laser_power=lp, scan_rate=sr) for lp, sr in self.config.simulation.parameter_groups]

    def simulate_grids(self) -> Dict[str, DatasetGrid]:
        """status1, an independent status-1 replicate, and status2."""
        profile1, profile2 = self.status_profiles()
        sim, seed = self.config.simulation, self.config.seed
        designs, groups = self._designs(), self._groups()
        return {
            "status1": generate_grid(profile1, designs, groups, sim.n_per_cell, sub_seed(seed, 1), key_tolerance=self.config.data.key_tolerance),
            "status2": generate_grid(profile2, designs, groups, sim.n_per_cell, sub_seed(seed, 2), key_tolerance=self.config.data.key_tolerance),
            "status1_replicate": generate_grid(
                profile1, designs, groups, sim.n_per_cell, sub_seed(seed, 3), key_tolerance=self.config.data.key_tolerance
            ),
        }

    def simulate(self, output_dir: Union[str, Path]) -> Dict[str, Any]:
        """Write both statuses as CSV plus a manifest of the generative truth."""
        output_dir = Path(output_dir)
        results = self._new_results("simulate", output_dir)

        logger.info("Step 1: Building status profiles...")
        profile1, profile2 = self.status_profiles()

        logger.info("Step 2: Generating measurement grids...")
        grids = self.simulate_grids()
        for name in ("status1", "status2"):
            path = save_dataset(grids[name], output_dir / f"{name}.csv", self.config.data.columns)
            results["saved_files"].append(str(path))

        logger.info("Step 3: Writing profile manifest...")
        manifest = {
            "seed": self.config.seed,
            "n_per_cell": self.config.simulation.n_per_cell,
            "designs": self.config.simulation.designs,
            "parameter_groups": [list(g) for g in self.config.simulation.parameter_groups],
            "profiles": {
                "status1": profile1.model_dump(mode="json"),
                "status2": profile2.model_dump(mode="json"),
            },
            "truth": {
                name: {
                    design.label: dict(zip(("radius", "height"), (m.model_dump() for m in profile.parameters_at(design))))
                    for design in self._designs()
                }
                for name, profile in (("status1", profile1), ("status2", profile2))
            },
            "files": {"status1": "status1.csv", "status2": "status2.csv"},
        }
        results["saved_files"].append(str(_write_json(output_dir / "manifest.json", manifest)))
        results["records"] = {name: len(grids[name]) for name in ("status1", "status2")}
        return self._finish(results)

    # Fitting ----------------------------------------------------------------

    def fit(self, dataset: Union[str, Path], output_dir: Union[str, Path]) -> Dict[str, Any]:
        output_dir = Path(output_dir)
        results = self._new_results("fit", output_dir)

        logger.info("Step 1: Loading dataset...")
        grid = self._load(dataset)

        logger.info("Step 2: Fitting dimension models per design...")
        models = fit_grid(grid, self.config.fit_options())
        trend = None
        if len(models.fits) >= 2:
            logger.info("Step 3: Regressing coefficients on design dimension...")
            trend = fit_param_trend(models)
        else:
            logger.warning("Only one design fitted; no coefficient trend written")

        path = save_model_set(models, output_dir / "models.json", trend)
        results["saved_files"].append(str(path))
        results["models"] = models
        results["trend"] = trend
        return self._finish(results)

    # Monitoring -------------------------------------------------------------

    def monitor(
        self,
        method: str,
        reference: Union[str, Path],
        query: Union[str, Path],
        output_dir: Union[str, Path],
        feature: str = "both",
        models: Optional[Union[str, Path]] = None,
    ) -> Dict[str, Any]:
        """Verdicts of one method for every query cell, plus accuracy when status labels allow it.

        With ``models`` (a file written by ``fit``) the prediction-based methods
        take their baseline from the saved trend and need no reference dataset.
        """
        if method not in METHODS:
            raise UsageError(f"unknown method {method!r}; choose one of {', '.join(METHODS)}")
        if models is not None and method not in ("m2-z", "m2-t2"):
            raise UsageError(f"--models applies to m2-z and m2-t2 only, not {method}")
        if reference is None and models is None:
            raise UsageError(f"{method} needs a reference dataset")
        output_dir = Path(output_dir)
        results = self._new_results("monitor", output_dir)

        logger.info("Step 1: Loading reference and query datasets...")
        query_grid = self._load(query)
        reference_grid = self._load(reference) if reference is not None and models is None else None
        expected = _expected_change(reference_grid, query_grid) if reference_grid is not None else None

        logger.info(f"Step 2: Running {method}...")
        if method == "m1":
            report = grid_report_m1(reference_grid, query_grid, self.config.tests.alpha, expected, self.config.workers)
        elif method in ("m2-z", "m2-t2"):
            report = self._monitor_m2(method, reference_grid, query_grid, expected, feature, models)
        elif method == "m3-same":
            report = self._monitor_m3_same(reference_grid, query_grid, expected, output_dir, results)
        else:
            report = self._monitor_m3_unknown(reference_grid, query_grid, expected, output_dir, results)

        logger.info(
            f"Step 3: Writing verdicts ({sum(v.changed for v in report.verdicts)} changed of {len(report.verdicts)})..."
        )
        document = report.model_dump(mode="json")
        if method in ("m1", "m2-z", "m2-t2", "m3-unknown"):
            document["grid"] = verdict_grid(report.verdicts)
        results["saved_files"].append(str(_write_json(output_dir / f"verdicts_{method}.json", document)))
        results["report"] = report
        results["grid"] = document.get("grid")
        return self._finish(results)

    def _monitor_m2(
        self,
        method: str,
        reference: Optional[DatasetGrid],
        query: DatasetGrid,
        expected: Optional[bool],
        feature: str,
        models: Optional[Union[str, Path]] = None,
    ) -> GridReport:
        tests = self.config.tests
        if models is not None:
            monitor = PredictionMonitor.from_saved_models(models, tests.alpha, tests.standard_error_z, tests.condition_cap)
        else:
            monitor = PredictionMonitor(reference, tests.alpha, tests.standard_error_z, tests.condition_cap, self.config.fit_options())
            monitor.check_coverage()

        verdicts: List[MonitorVerdict] = []
        skipped: Dict[str, str] = {}
        last_error: Optional[MonitorError] = None
        for key, records in query.cells.items():
            try:
                if method == "m2-z":
                    verdicts.append(monitor.monitor_z(records, key, feature))
                else:
                    verdicts.append(monitor.monitor_t2(records, key))
            except MonitorError as e:
                logger.warning(f"Skipping {key.label}: {e}")
                skipped[key.label] = f"{type(e).__name__}: {e}"
                last_error = e
        if not verdicts and last_error is not None:
            raise last_error

        rejections = sum(v.changed for v in verdicts)
        table = AccuracyTable(
            title="One-sample Z-test accuracy" if method == "m2-z" else "Hotelling's T^2 accuracy",
            rows=[
                AccuracyRow(
                    scenario="Different Status" if expected else "Same Status" if expected is False else "Query",
                    expected_change=expected,
                    rejections=rejections,
                    acceptances=len(verdicts) - rejections,
                )
            ],
        )
        return GridReport(method=method, verdicts=verdicts, table=table, skipped=skipped)

    def _monitor_m3_same(
        self,
        reference: DatasetGrid,
        query: DatasetGrid,
        expected: Optional[bool],
        output_dir: Path,
        results: Dict[str, Any],
    ) -> GridReport:
        boot_cfg, seed = self.config.bootstrap, self.config.seed
        combos = same_group_trials(reference, query, boot_cfg.max_conditioning)
        if not combos:
            raise UsageError("m3-same needs a design with three parameter groups present in both reference and query")

        def boot(grid: DatasetGrid, design: DesignSpec, combo, model: str, iterations: int, stream: int):
            return bootstrap_params(
                {p: grid.cell(design, p) for p in combo},
                boot_cfg.samples_per_group,
                iterations,
                model,
                stream,
                boot_cfg.retry_cap,
                boot_cfg.max_failure_fraction,
                self.config.fit_options(),
                self.config.workers,
            )

        verdicts, distributions = [], {"reference": [], "query": []}
        for t, (design, combo) in enumerate(combos):
            for m, model in enumerate(("radius", "height")):
                ref_dist = boot(reference, design, combo, model, boot_cfg.reference_iterations, sub_seed(seed, t, m, 0))
                query_dist = boot(query, design, combo, model, boot_cfg.iterations, sub_seed(seed, t, m, 1))
                distributions["reference"].append(ref_dist)
                distributions["query"].append(query_dist)
                verdicts.append(test_same_group_m3(ref_dist, query_dist, self.config.tests.alpha, self.config.tests.condition_cap))

        for status, dists in distributions.items():
            results["saved_files"].append(str(save_model_json(dists, output_dir / f"bootstrap_{status}.json")))

        rows = []
        for model in ("radius", "height"):
            subset = [v for v in verdicts if v.evidence["model"] == model]
            rejections = sum(v.changed for v in subset)
            rows.append(
                AccuracyRow(scenario=f"{model} model", expected_change=expected, rejections=rejections, acceptances=len(subset) - rejections)
            )
        return GridReport(method="m3-same", verdicts=verdicts, table=AccuracyTable(title="Bootstrap T^2 accuracy", rows=rows))

    def _monitor_m3_unknown(
        self,
        reference: DatasetGrid,
        query: DatasetGrid,
        expected: Optional[bool],
        output_dir: Path,
        results: Dict[str, Any],
    ) -> GridReport:
        th, boot_cfg, seed = self.config.thresholds, self.config.bootstrap, self.config.seed
        verdicts: List[MonitorVerdict] = []
        threshold_sets: List[ThresholdSet] = []
        query_dists: List[BootstrapDistribution] = []
        index = 0
        for design in query.designs:
            query_cells = {p: query.cell(design, p) for p in query.groups_for(design)}
            if len(query_cells) < 3:
                raise UsageError(
                    f"m3-unknown needs the query grid to hold each target group and two companion groups; "
                    f"{design.label} has {len(query_cells)} group(s)"
                )
            for target in query.groups_for(design):
                known = {p: reference.cell(design, p) for p in reference.groups_for(design) if p != target}
                if len(known) < 4:
                    raise InsufficientDataError(
                        f"m3-unknown needs 4 known reference groups at {design.label}, got {len(known)}"
                    )
                intervals = {}
                for m, model in enumerate(("radius", "height")):
                    try:
                        ts = loo_thresholds(
                            known,
                            th.coverage,
                            model,
                            sub_seed(seed, index, m, 0),
                            self.config.tests.alpha,
                            th.widening_cap,
                            th.combine,
                            boot_cfg.options(),
                            self.config.fit_options(),
                            self.config.workers,
                        )
                        intervals.update(ts.intervals)
                        threshold_sets.append(ts)
                    except ThresholdFailureError as e:
                        logger.error(f"{design.label} {target.label}: {model} thresholds failed: {e}")
                chosen = evaluation_cells(target, query_cells)
                dists = [
                    bootstrap_params(
                        chosen,
                        boot_cfg.samples_per_group,
                        boot_cfg.iterations,
                        model,
                        sub_seed(seed, index, m, 1),
                        boot_cfg.retry_cap,
                        boot_cfg.max_failure_fraction,
                        self.config.fit_options(),
                        self.config.workers,
                    )
                    for m, model in enumerate(("radius", "height"))
                ]
                query_dists.extend(dists)
                verdict = monitor_unknown_group_m3(intervals, dists[0], dists[1], th.vote_cap)
                verdicts.append(verdict.model_copy(update={"cell": CellKey(design=design, params=target)}))
                index += 1

        results["saved_files"].append(str(save_model_json(threshold_sets, output_dir / "thresholds.json")))
        results["saved_files"].append(str(save_model_json(query_dists, output_dir / "bootstrap_query.json")))

        rejections = sum(v.changed for v in verdicts)
        table = AccuracyTable(
            title="Leave-one-out threshold accuracy (majority vote)",
            rows=[AccuracyRow(scenario="Query", expected_change=expected, rejections=rejections, acceptances=len(verdicts) - rejections)],
        )
        return GridReport(method="m3-unknown", verdicts=verdicts, table=table)

    # Evaluation -------------------------------------------------------------

    def evaluate(self, output_dir: Union[str, Path], parts: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        """Accuracy tables, sweeps and calibration on the configured synthetic status pair."""
        parts = list(parts or EVALUATION_PARTS)
        unknown = [p for p in parts if p not in EVALUATION_PARTS]
        if unknown:
            raise UsageError(f"unknown evaluation part(s) {', '.join(unknown)}; choose from {', '.join(EVALUATION_PARTS)}")
        output_dir = Path(output_dir)
        results = self._new_results("evaluate", output_dir)
        results["tables"] = []
        cfg, mc = self.config, self.config.monte_carlo
        alpha, workers, seed = cfg.tests.alpha, cfg.workers, cfg.seed

        logger.info("Step 1: Simulating status grids...")
        grids = self.simulate_grids()
        status1, replicate, status2 = grids["status1"], grids["status1_replicate"], grids["status2"]

        if "calibration" in parts:
            logger.info("Step 2: Null calibration...")
            rows = null_calibration(alphas=sorted({0.05, 0.10, alpha}), trials=mc.null_trials, seed=sub_seed(seed, 10))
            results["calibration"] = rows
            results["saved_files"].append(
                str(_write_json(output_dir / "calibration.json", [r.model_dump(mode="json") for r in rows]))
            )

        if "m1" in parts:
            logger.info("Step 3: Method 1 grid reports and sample-size sweep...")
            m1 = evaluate_m1(status1, replicate, status2, alpha, workers)
            table = m1.table()
            results["tables"].append(table)
            results["m1_grid"] = {
                feature: verdict_grid(m1.out_of_control.verdicts, feature) for feature in ("radius", "height")
            }
            document = {"table": table.model_dump(mode="json"), "out_of_control_grid": results["m1_grid"]}
            results["saved_files"].append(str(_write_json(output_dir / "m1_accuracy.json", document)))
            points = sample_size_sweep_m1(
                status1, replicate, status2, mc.sample_sizes, mc.repetitions, alpha, sub_seed(seed, 11), workers
            )
            results["saved_files"].append(str(save_sweep_csv(points, output_dir / "m1_sample_size_sweep.csv")))

        if "m2" in parts:
            logger.info("Step 4: Method 2 leave-one-cell-out evaluation and data-efficiency sweep...")
            m2 = evaluate_m2(
                status1, status2, alpha, cfg.tests.standard_error_z, cfg.tests.condition_cap, cfg.fit_options(), workers
            )
            results["tables"].append(m2.t2_table)
            results["m2"] = m2
            document = m2.model_dump(mode="json", exclude={"in_control", "out_of_control"})
            document["out_of_control_grid"] = verdict_grid(m2.out_of_control)
            document["in_control_grid"] = verdict_grid(m2.in_control)
            results["saved_files"].append(str(_write_json(output_dir / "m2_evaluation.json", document)))
            surface = data_efficiency_sweep_m2(
                status1,
                status2,
                mc.design_counts,
                mc.param_counts,
                alpha,
                mc.repetitions,
                sub_seed(seed, 12),
                workers,
                cfg.tests.condition_cap,
                cfg.fit_options(),
            )
            results["saved_files"].extend(str(p) for p in save_error_surface(surface, output_dir))

        if "m3-same" in parts:
            logger.info("Step 5: Method 3 same-group bootstrap monitoring...")
            tables = evaluate_m3_same_group(
                status1,
                status2,
                alpha,
                cfg.bootstrap.options(),
                cfg.bootstrap.reference_iterations,
                mc.same_group_trials,
                sub_seed(seed, 13),
                cfg.tests.condition_cap,
                cfg.fit_options(),
                workers,
                cfg.bootstrap.max_conditioning,
            )
            results["tables"].extend(tables.values())
            results["saved_files"].append(
                str(_write_json(output_dir / "m3_same_group.json", {k: t.model_dump(mode="json") for k, t in tables.items()}))
            )

        if "m3-unknown" in parts:
            logger.info("Step 6: Method 3 unknown-group thresholds and majority vote...")
            unknown_eval = evaluate_m3_unknown_group(
                status1,
                status2,
                cfg.bootstrap.options(),
                cfg.thresholds.coverage,
                alpha,
                cfg.thresholds.combine,
                cfg.thresholds.widening_cap,
                cfg.thresholds.vote_cap,
                mc.unknown_group_trials,
                sub_seed(seed, 14),
                cfg.fit_options(),
                workers,
            )
            results["tables"].append(unknown_eval.table)
            results["saved_files"].append(
                str(_write_json(output_dir / "m3_unknown_group.json", unknown_eval.model_dump(mode="json")))
            )

        return self._finish(results)

    # Reporting --------------------------------------------------------------

    def report(self, dataset: Union[str, Path], output_dir: Union[str, Path]) -> Dict[str, Any]:
        """Per-cell counts and mean/SD of R and H."""
        output_dir = Path(output_dir)
        results = self._new_results("report", output_dir)
        grid = self._load(dataset)
        summaries = summarize_grid(grid)
        document = {
            "records": len(grid),
            "cells": len(grid.cells),
            "status_labels": grid.status_labels,
            "summary": [s.model_dump() for s in summaries],
        }
        results["saved_files"].append(str(_write_json(output_dir / "grid_summary.json", document)))
        results["summary"] = summaries
        return self._finish(results)
