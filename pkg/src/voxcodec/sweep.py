"""RD sweeps over trained models and the multi-condition report harness."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .codec import PRESETS, ConditionPreset, encode, decode
from .errors import ConfigurationError, DomainError
from .geometry import PointCloud
from .metrics import RdCurve, RdPoint, bd_psnr, d1_mse, d2_mse, estimate_normals, geometry_psnr
from .nn.weights import WeightStore
from .training import TrainConfig, sequential_train, train_model

PSNR_CAP_DB = 999.0  # sentinel for lossless points in CSV output


@dataclass
class SweepRow:
    lam: float
    bpp: float
    d1_psnr: float
    d2_psnr: float


@dataclass
class SweepResult:
    preset: ConditionPreset
    rows: List[SweepRow] = field(default_factory=list)

    def curve(self, metric: str = "d1", exclude_lowest_rate: bool = False) -> Optional[RdCurve]:
        """RD curve over finite points; None when fewer than 4 remain."""
        rows = sorted(self.rows, key=lambda r: r.bpp)
        if exclude_lowest_rate and rows:
            rows = rows[1:]
        points = []
        last_bpp = None
        for row in rows:
            psnr = row.d1_psnr if metric == "d1" else row.d2_psnr
            if not math.isfinite(psnr):
                warnings.warn(f"dropping lossless point at {row.bpp:.4f} bpp from the curve")
                continue
            if last_bpp is not None and row.bpp <= last_bpp:
                warnings.warn(f"dropping duplicate-rate point at {row.bpp:.4f} bpp")
                continue
            points.append(RdPoint(row.bpp, psnr))
            last_bpp = row.bpp
        if len(points) < 4:
            warnings.warn("fewer than 4 usable RD points; BD-PSNR unavailable")
            return None
        return RdCurve(points)

    def write_csv(self, target) -> None:
        close = False
        if not hasattr(target, "write"):
            target = open(target, "w", newline="")
            close = True
        try:
            writer = csv.writer(target)
            writer.writerow(["lambda", "bpp", "d1_psnr", "d2_psnr"])
            for row in self.rows:
                writer.writerow([
                    f"{row.lam:g}", f"{row.bpp:.6f}",
                    f"{min(row.d1_psnr, PSNR_CAP_DB):.4f}",
                    f"{min(row.d2_psnr, PSNR_CAP_DB):.4f}",
                ])
        finally:
            if close:
                target.close()


def rd_sweep(pc: PointCloud, models: Sequence[Tuple[float, WeightStore]],
             preset: ConditionPreset, metric_flag: str = "d1",
             block_size: Optional[int] = None) -> SweepResult:
    """Encode a cloud with one model per lambda and measure (bpp, PSNR)."""
    if not models:
        raise ConfigurationError("sweep needs at least one trained model")
    reference = pc if pc.normals is not None else estimate_normals(pc, k=9)
    result = SweepResult(preset)
    for lam, weights in models:
        enc = encode(pc, weights, preset, metric_flag, block_size)
        decoded = decode(enc.data, weights)
        d1 = d1_mse(decoded, pc)
        d2 = d2_mse(decoded, reference)
        result.rows.append(SweepRow(
            lam, enc.bpp,
            geometry_psnr(d1, pc.bit_depth),
            geometry_psnr(d2, pc.bit_depth),
        ))
    return result


def plot_curves(curves: Dict[str, SweepResult], path: str, metric: str = "d1",
                title: str = "") -> None:
    """SVG line chart of RD curves, one line per condition."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, sweep in curves.items():
        rows = sorted(sweep.rows, key=lambda r: r.bpp)
        xs = [r.bpp for r in rows]
        ys = [min(r.d1_psnr if metric == "d1" else r.d2_psnr, PSNR_CAP_DB) for r in rows]
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel("bits per input point")
    ax.set_ylabel(f"{metric.upper()} PSNR (dB)")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


@dataclass
class SuiteReport:
    sweeps: Dict[str, Dict[str, SweepResult]]  # cloud id -> condition -> sweep
    bd_matrix: Dict[str, Dict[str, Dict[str, Optional[float]]]]  # cloud -> test -> ref

    def matrix_csv(self, target) -> None:
        close = False
        if not hasattr(target, "write"):
            target = open(target, "w", newline="")
            close = True
        try:
            writer = csv.writer(target)
            for cloud_id, matrix in self.bd_matrix.items():
                names = sorted(matrix)
                writer.writerow([f"cloud={cloud_id}"] + [f"vs {n}" for n in names])
                for test in names:
                    cells = []
                    for ref in names:
                        value = matrix[test][ref]
                        cells.append("n/a" if value is None else f"{value:+.3f}")
                    writer.writerow([test] + cells)
        finally:
            if close:
                target.close()


def run_condition_suite(clouds: Dict[str, PointCloud],
                        conditions: Sequence[str],
                        lams: Sequence[float],
                        train_dataset,
                        base_cfg: TrainConfig,
                        block_size: Optional[int] = None,
                        metric_flag: str = "d1",
                        outdir: Optional[str] = None,
                        exclude_lowest_rate: bool = False) -> SuiteReport:
    """Train every condition at every lambda, sweep, and cross-compare.

    BD-PSNR cells that cannot be computed (short or non-overlapping
    curves) come back as None and render as "n/a".
    """
    for name in conditions:
        if name not in PRESETS:
            raise ConfigurationError(f"unknown condition {name!r}")
    lams = sorted(set(float(l) for l in lams), reverse=True)
    if len(lams) < 2:
        raise ConfigurationError("suite needs at least two lambdas")

    weights_by_condition: Dict[str, List[Tuple[float, WeightStore]]] = {}
    for name in conditions:
        preset = PRESETS[name]
        cfg = replace(base_cfg, model_kind=preset.model,
                      transform_kind=preset.transforms,
                      focal=replace(base_cfg.focal, alpha=preset.alpha))
        if preset.training == "sequential":
            chained = sequential_train(lams, cfg, train_dataset)
            weights_by_condition[name] = [(lam, chained.weights[lam]) for lam in lams]
        else:
            trained = []
            for lam in lams:
                ws, _ = train_model(replace(cfg, lam=lam), train_dataset)
                trained.append((lam, ws))
            weights_by_condition[name] = trained

    sweeps: Dict[str, Dict[str, SweepResult]] = {}
    matrix: Dict[str, Dict[str, Dict[str, Optional[float]]]] = {}
    for cloud_id, pc in clouds.items():
        per_condition: Dict[str, SweepResult] = {}
        for name in conditions:
            preset = PRESETS[name]
            per_condition[name] = rd_sweep(pc, weights_by_condition[name],
                                           preset, metric_flag, block_size)
        sweeps[cloud_id] = per_condition

        cells: Dict[str, Dict[str, Optional[float]]] = {}
        for test in conditions:
            cells[test] = {}
            curve_test = per_condition[test].curve(
                metric_flag, exclude_lowest_rate and PRESETS[test].training == "sequential")
            for ref in conditions:
                curve_ref = per_condition[ref].curve(
                    metric_flag, exclude_lowest_rate and PRESETS[ref].training == "sequential")
                if curve_test is None or curve_ref is None:
                    cells[test][ref] = None
                    continue
                try:
                    cells[test][ref] = bd_psnr(curve_test, curve_ref)
                except DomainError:
                    cells[test][ref] = None
        matrix[cloud_id] = cells

        if outdir is not None:
            import os

            os.makedirs(outdir, exist_ok=True)
            for name, sweep in per_condition.items():
                sweep.write_csv(os.path.join(outdir, f"{cloud_id}_{name}.csv"))
            plot_curves(per_condition, os.path.join(outdir, f"{cloud_id}_rd.svg"),
                        metric_flag, title=cloud_id)

    report = SuiteReport(sweeps, matrix)
    if outdir is not None:
        import os

        report.matrix_csv(os.path.join(outdir, "bd_matrix.csv"))
    return report
