"""Per-image evaluation rows, mean/std summaries and text tables.

Every number in a summary or table is recomputed from per-image rows, so a
report can always be regenerated from the CSV alone (:func:`read_rows`).
"""

from dataclasses import dataclass, field
import csv
import json
import math

import numpy as np

from . import kspace, metrics
from .data import bicubic_baseline

__all__ = [
    "ROW_FIELDS",
    "TABLE_METRICS",
    "RunReport",
    "evaluate_images",
    "baseline_rows",
    "write_rows",
    "read_rows",
    "summarize",
    "render_table",
    "render_ablation_table",
    "fmt_cell",
]

METRIC_FIELDS = ["psnr", "ssim", "rmse_e2", "vif", "kl", "kurtosis", "skewness", "mean", "std"]
ROW_FIELDS = ["method", "rate", "image"] + METRIC_FIELDS
TABLE_METRICS = ["psnr", "ssim", "rmse_e2", "vif", "kl"]
HEADINGS = {"psnr": "PSNR", "ssim": "SSIM", "rmse_e2": "RMSE(1e-2)", "vif": "VIF", "kl": "KL"}


def evaluate_images(method, rate, recons, gts, names=None):
    """Per-image metric rows for ``recons`` against ``gts``."""
    rows = []
    for i, (r, g) in enumerate(zip(recons, gts)):
        row = {"method": method, "rate": float(rate),
               "image": names[i] if names is not None else str(i)}
        row.update(metrics.evaluate_pair(np.clip(r, 0.0, 1.0), g).row())
        rows.append(row)
    return rows


def baseline_rows(gts, rate, names=None, self_check=False):
    """LR (zero-filled) and BICUBIC rows at ``rate``; ``self_check`` adds recon = gt."""
    s = gts.shape[-1]
    m = kspace.make_mask(gts.shape[-2], s, rate)
    lr = np.stack([kspace.degrade(g, m) for g in gts])
    rows = evaluate_images("LR", rate, lr, gts, names)
    rows += evaluate_images("BICUBIC", rate, [bicubic_baseline(x, rate) for x in lr], gts, names)
    if self_check:
        rows += evaluate_images("GT", rate, gts, gts, names)
    return rows


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_rows(path):
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {"method": r["method"], "rate": float(r["rate"]), "image": r["image"]}
            row.update({k: float(r[k]) for k in METRIC_FIELDS})
            out.append(row)
    return out


def _stats(values):
    v = np.asarray(values, dtype=np.float64)
    if np.isinf(v).any():
        return {"mean": float(np.mean(v)), "std": math.nan, "n": len(v)}
    std = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return {"mean": float(np.mean(v)), "std": std, "n": len(v)}


def summarize(rows):
    """``{method: {rate: {metric: {mean, std, n}}}}``; std uses the n-1 denominator."""
    groups = {}
    for r in rows:
        groups.setdefault(r["method"], {}).setdefault(r["rate"], []).append(r)
    out = {}
    for method, by_rate in groups.items():
        out[method] = {}
        for rate, rs in sorted(by_rate.items(), reverse=True):
            out[method][rate] = {k: _stats([r[k] for r in rs]) for k in METRIC_FIELDS}
    return out


def fmt_cell(stat, digits=4):
    mean, std = stat["mean"], stat["std"]
    if math.isinf(mean):
        return "inf"
    if math.isnan(std):
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} ({std:.{digits}f})"


def _grid(header, body):
    widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in body])


def render_table(summary, methods=None, metric_names=TABLE_METRICS):
    """Method x metric table, one block per rate, cells ``mean (std)``."""
    methods = methods or list(summary)
    rates = sorted({rate for m in methods for rate in summary.get(m, {})}, reverse=True)
    blocks = []
    for rate in rates:
        body = []
        for m in methods:
            if rate in summary.get(m, {}):
                s = summary[m][rate]
                body.append([m] + [fmt_cell(s[k]) for k in metric_names])
        title = f"rate {rate:g} ({round(1 / rate):d}x)" if rate > 0 else f"rate {rate:g}"
        blocks.append(title + "\n" + _grid(["method"] + [HEADINGS[k] for k in metric_names], body))
    return "\n\n".join(blocks) + "\n"


def render_ablation_table(summary, flags, rate, reference="full",
                          metric_names=("psnr", "ssim", "rmse_e2", "vif")):
    """Ablation table: one row per variant with its +/- component flags.

    ``flags`` maps variant -> (cyclic, spatial, channel).
    """
    body = []
    for variant, f in flags.items():
        name = f"HPMR_{variant}" if variant != reference else "HPMR"
        s = summary.get(name, {}).get(rate)
        cells = [fmt_cell(s[k]) if s else "-" for k in metric_names]
        mark = " (reference)" if variant == reference else ""
        body.append([name + mark] + ["+" if x else "-" for x in f] + cells)
    header = ["variant", "cyclic loss", "spatial att.", "channel att."] + [HEADINGS[k] for k in metric_names]
    return f"rate {rate:g}\n" + _grid(header, body) + "\n"


@dataclass
class RunReport:
    config: dict
    summary: dict
    rows_csv: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self):
        def clean(o):
            if isinstance(o, dict):
                return {str(k): clean(v) for k, v in o.items()}
            if isinstance(o, float) and not math.isfinite(o):
                return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
            return o
        return json.dumps(clean({"config": self.config, "summary": self.summary,
                                 "rows_csv": self.rows_csv, **self.extra}),
                          indent=2, sort_keys=True)
