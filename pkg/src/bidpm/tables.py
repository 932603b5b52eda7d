"""Plain-text tables (datasets, metrics, reports) and the SVG scatter plot."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .evaluate import EvalReport, TheoremDiagnostics


class TableError(ValueError):
    pass


def fnum(x: float) -> str:
    """Shortest decimal that parses back to the same float."""
    return repr(float(x))


# ------------------------------------------------------------------ datasets

DATASET_MAGIC = "# bidpm-dataset"
DATASET_COLUMNS = ["side", "label", "partner", "x0", "x1"]


@dataclass
class PointTable:
    """Rows of a dataset file.

    ``partner`` is the position of the partner row among the rows of the
    other side, or -1 for unpaired rows.
    """

    meta: dict[str, str]
    side: list[str]
    label: np.ndarray
    partner: np.ndarray
    points: np.ndarray

    def select(self, side: str) -> "PointTable":
        mask = np.array([s == side for s in self.side], dtype=bool)
        return PointTable(dict(self.meta), [side] * int(mask.sum()), self.label[mask], self.partner[mask],
                          self.points[mask])

    def paired(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(source points, partner target points, source labels) for every paired source row."""
        src = self.select("source")
        tgt = self.select("target")
        keep = src.partner >= 0
        if keep.any() and src.partner[keep].max() >= len(tgt.points):
            raise TableError("partner index points past the end of the target rows")
        return src.points[keep], tgt.points[src.partner[keep]], src.label[keep]

    def target_means(self) -> np.ndarray:
        K = int(self.meta["K"])
        r = float(self.meta["r_target"])
        ang = 2.0 * np.pi * np.arange(K) / K
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)

    def pi(self) -> tuple[int, ...]:
        return tuple(int(p) for p in self.meta["pi"].split(","))


def dataset_table(ds) -> PointTable:
    meta = {
        "K": str(ds.source_spec.components),
        "r_source": fnum(ds.source_spec.radius), "s_source": fnum(ds.source_spec.std),
        "r_target": fnum(ds.target_spec.radius), "s_target": fnum(ds.target_spec.std),
        "seed": str(ds.seed), "rho": fnum(ds.rho), "pi": ",".join(str(p) for p in ds.pi),
    }
    ns, nt = len(ds.source), len(ds.target)
    src_partner = np.full(ns, -1, dtype=np.int64)
    tgt_partner = np.full(nt, -1, dtype=np.int64)
    src_partner[ds.paired_source] = ds.paired_target
    tgt_partner[ds.paired_target] = ds.paired_source
    return PointTable(
        meta, ["source"] * ns + ["target"] * nt,
        np.concatenate([ds.source_labels, ds.target_labels]),
        np.concatenate([src_partner, tgt_partner]),
        np.concatenate([ds.source, ds.target]),
    )


def write_points(path, table: PointTable) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    header = " ".join(f"{k}={v}" for k, v in table.meta.items())
    buf.write(f"{DATASET_MAGIC} {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    dim = table.points.shape[1]
    w.writerow(["side", "label", "partner"] + [f"x{i}" for i in range(dim)])
    for s, lab, p, row in zip(table.side, table.label, table.partner, table.points):
        w.writerow([s, int(lab), int(p)] + [fnum(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_points(path) -> PointTable:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(DATASET_MAGIC):
        raise TableError(f"{path}: missing '{DATASET_MAGIC}' header line")
    meta = {}
    for tok in lines[0][len(DATASET_MAGIC):].split():
        if "=" not in tok:
            raise TableError(f"{path}: bad header token {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = v
    reader = csv.reader(lines[1:])
    cols = next(reader, None)
    if cols is None or cols[:3] != ["side", "label", "partner"]:
        raise TableError(f"{path}: expected columns side,label,partner,x0,...")
    sides, labels, partners, pts = [], [], [], []
    for row in reader:
        if not row:
            continue
        if len(row) != len(cols):
            raise TableError(f"{path}: row has {len(row)} cells, expected {len(cols)}")
        if row[0] not in ("source", "target"):
            raise TableError(f"{path}: side must be 'source' or 'target', got {row[0]!r}")
        sides.append(row[0])
        labels.append(int(row[1]))
        partners.append(int(row[2]))
        pts.append([float(v) for v in row[3:]])
    dim = len(cols) - 3
    return PointTable(meta, sides, np.asarray(labels, dtype=np.int64), np.asarray(partners, dtype=np.int64),
                      np.asarray(pts, dtype=np.float64).reshape(-1, dim))


# ------------------------------------------------------------------- metrics

METRICS_COLUMNS = ["step", "total", "L_p", "L_u", "grad_norm"]
TIMING_COLUMNS = ["step", "wall_ms"]


def metrics_rows(records) -> list[list[str]]:
    return [[str(r.step), fnum(r.loss.total), fnum(r.loss.paired), fnum(r.loss.unpaired), fnum(r.grad_norm)]
            for r in records]


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------- reports

REPORT_COLUMNS = [
    "method", "n_steps", "rho", "forward_mean", "forward_std", "backward_mean", "backward_std", "mmd2",
    "centroid_max", "centroid_distances", "thm1_max_deviation", "thm1_endpoint_gap", "thm1_residual_loss",
]


def report_row(rep: EvalReport) -> list[str]:
    th = rep.theorem
    return [
        rep.method, str(rep.n_steps), fnum(rep.rho),
        fnum(rep.forward_mean), fnum(rep.forward_std), fnum(rep.backward_mean), fnum(rep.backward_std),
        fnum(rep.mmd2), fnum(rep.centroid_max) if rep.centroid_distances else "",
        ";".join(fnum(d) for d in rep.centroid_distances),
        fnum(th.max_deviation) if th else "", fnum(th.endpoint_gap) if th else "",
        fnum(th.residual_loss) if th else "",
    ]


def parse_report(row: dict[str, str]) -> EvalReport:
    th = None
    if row.get("thm1_max_deviation"):
        th = TheoremDiagnostics(float(row["thm1_max_deviation"]), float(row["thm1_endpoint_gap"]),
                                float(row["thm1_residual_loss"]))
    cents = [float(v) for v in row["centroid_distances"].split(";")] if row.get("centroid_distances") else []
    return EvalReport(
        row["method"], int(row["n_steps"]), float(row["rho"]),
        float(row["forward_mean"]), float(row["forward_std"]), float(row["backward_mean"]),
        float(row["backward_std"]), float(row["mmd2"]), cents, th,
    )


def summary_text(rep: EvalReport) -> str:
    lines = [
        f"method: {rep.method}",
        f"euler steps: {rep.n_steps}",
        f"paired fraction: {rep.rho:g}",
        f"forward L2 error: {rep.forward_mean:.6g} (std {rep.forward_std:.3g})",
        f"backward L2 error: {rep.backward_mean:.6g} (std {rep.backward_std:.3g})",
        f"MMD^2 synthesized vs target: {rep.mmd2:.6g}",
    ]
    if rep.centroid_distances:
        lines.append("centroid distances: " + ", ".join(f"{d:.4g}" for d in rep.centroid_distances))
        lines.append(f"max centroid distance: {rep.centroid_max:.6g}")
    if rep.theorem:
        lines.append(f"straight-direction deviation: {rep.theorem.max_deviation:.6g}")
        lines.append(f"endpoint velocity gap: {rep.theorem.endpoint_gap:.6g}")
        lines.append(f"residual matching loss: {rep.theorem.residual_loss:.6g}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------- svg


def scatter_svg(source: np.ndarray, target: np.ndarray, synth: np.ndarray,
                pairs: Sequence[tuple[int, int]] = (), size: int = 480) -> str:
    """Source (blue), target (orange) and synthesized (red) points; green pair links."""
    allpts = np.concatenate([a for a in (source, target, synth) if len(a)]) if (
        len(source) or len(target) or len(synth)) else np.zeros((1, 2))
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 12

    def xy(p):
        px = pad + (p[0] - lo[0]) / span * (size - 2 * pad)
        py = size - pad - (p[1] - lo[1]) / span * (size - 2 * pad)
        return f"{px:.2f}", f"{py:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>',
           '<g stroke="#2ca02c" stroke-opacity="0.35" stroke-width="0.6">']
    for i, j in pairs:
        (x1, y1), (x2, y2) = xy(source[i]), xy(target[j])
        out.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>')
    out.append("</g>")
    for cls, pts, color in (("source", source, "#1f77b4"), ("target", target, "#ff7f0e"),
                            ("synth", synth, "#d62728")):
        out.append(f'<g class="{cls}" fill="{color}" fill-opacity="0.7">')
        for p in pts:
            cx, cy = xy(p)
            out.append(f'<circle cx="{cx}" cy="{cy}" r="2"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"

