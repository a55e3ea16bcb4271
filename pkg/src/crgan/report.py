"""Evaluation over enhanced/noisy directories and report rendering.

Evaluation always scores the unprocessed noisy signal alongside the enhanced
one, so every table carries its own baseline row. Reports render three ways
from the same numbers: a TSV, an aligned text table, and a PNG bar chart per
metric column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, quality

# fixed comparison order for report tables
REPORT_KEYS = ("pesq", "stoi", "csig", "cbak", "covl")
ALL_KEYS = ("pesq", "stoi", "segsnr", "llr", "wss", "csig", "cbak", "covl")

DESK_SCALE_DISCLAIMER = (
    "Note: scores were computed on a small synthetic corpus and the PESQ column "
    "uses the source named in its header (a frequency-weighted SNR stand-in "
    "unless an external plugin was supplied). They are not comparable to "
    "results reported on full speech corpora scored with ITU-T PESQ."
)

NOISY_SYSTEM = "noisy"


@dataclass
class EvaluationResult:
    rows: list = field(default_factory=list)          # per-utterance dicts
    exclusions: list = field(default_factory=list)    # {"id","system","reason"}
    pesq_label: str = quality.SURROGATE_LABEL

    @property
    def systems(self) -> list:
        seen = []
        for row in self.rows:
            if row["system"] not in seen:
                seen.append(row["system"])
        return seen

    def aggregate(self) -> dict:
        """system -> {metric -> mean, "n" -> utterance count}"""
        out = {}
        for system in self.systems:
            rows = [r for r in self.rows if r["system"] == system]
            out[system] = {k: float(np.mean([r[k] for r in rows])) for k in ALL_KEYS}
            out[system]["n"] = len(rows)
        return out


def _wav_stems(directory: Path) -> dict:
    return {p.stem: p for p in sorted(directory.glob("*.wav"))}


def evaluate_directories(
    clean_dir, enhanced_dir, noisy_dir, pesq_source: str | None = None,
    system: str = "enhanced",
) -> EvaluationResult:
    """Score every utterance in `enhanced_dir` (plus its noisy counterpart)
    against the same-named clean reference. Utterances a metric rejects are
    excluded with a reason instead of poisoning the aggregate."""
    clean_dir, enhanced_dir, noisy_dir = Path(clean_dir), Path(enhanced_dir), Path(noisy_dir)
    pesq_fn, label = quality.make_pesq_source(pesq_source)
    clean_files = _wav_stems(clean_dir)
    enhanced_files = _wav_stems(enhanced_dir)
    noisy_files = _wav_stems(noisy_dir)
    if not enhanced_files:
        raise ValueError(f"no .wav files to evaluate in {enhanced_dir}")
    missing = sorted(set(enhanced_files) - set(clean_files))
    if missing:
        raise ValueError(f"no clean reference for {missing[:5]} in {clean_dir}")
    missing = sorted(set(enhanced_files) - set(noisy_files))
    if missing:
        raise ValueError(f"no noisy counterpart for {missing[:5]} in {noisy_dir}")

    result = EvaluationResult(pesq_label=label)
    for stem, enhanced_path in enhanced_files.items():
        clean = dsp.read_wav(clean_files[stem])
        for sys_name, path in ((system, enhanced_path), (NOISY_SYSTEM, noisy_files[stem])):
            degraded = dsp.read_wav(path)
            if len(degraded) != len(clean):
                n = min(len(degraded), len(clean))
                degraded = dsp.Waveform(degraded.samples[:n], degraded.sample_rate)
                clean_cut = dsp.Waveform(clean.samples[:n], clean.sample_rate)
            else:
                clean_cut = clean
            try:
                metrics = quality.evaluate_pair(clean_cut, degraded, pesq_fn)
            except quality.QualityError as exc:
                result.exclusions.append({"id": stem, "system": sys_name, "reason": str(exc)})
                continue
            result.rows.append({"id": stem, "system": sys_name, **metrics})
    return result


# ---------------------------------------------------------------------------
# TSV round trip
# ---------------------------------------------------------------------------

def _header(pesq_label: str) -> list:
    names = {"pesq": pesq_label}
    return ["id", "system"] + [names.get(k, k.upper()) for k in ALL_KEYS]


def write_metrics_tsv(result: EvaluationResult, path):
    path = Path(path)
    lines = ["\t".join(_header(result.pesq_label))]
    for row in result.rows:
        lines.append(
            "\t".join([row["id"], row["system"]] + [f"{row[k]:.6f}" for k in ALL_KEYS])
        )
    path.write_text("\n".join(lines) + "\n")


def read_metrics_tsv(path) -> EvaluationResult:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty metrics file")
    header = lines[0].split("\t")
    if len(header) != 2 + len(ALL_KEYS) or header[:2] != ["id", "system"]:
        raise ValueError(f"{path}: unrecognized metrics header {header!r}")
    if not header[2].startswith("PESQ["):
        raise ValueError(f"{path}: PESQ column lacks a provenance label: {header[2]!r}")
    result = EvaluationResult(pesq_label=header[2])
    for ln in lines[1:]:
        cells = ln.split("\t")
        if len(cells) != len(header):
            raise ValueError(f"{path}: row width mismatch: {ln!r}")
        row = {"id": cells[0], "system": cells[1]}
        for key, cell in zip(ALL_KEYS, cells[2:]):
            row[key] = float(cell)
        result.rows.append(row)
    return result


# ---------------------------------------------------------------------------
# text rendering
# ---------------------------------------------------------------------------

def _format_table(headers: list, rows: list) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
    out.extend(fmt.format(*row) for row in rows)
    return "\n".join(out)


def render_evaluation_text(result: EvaluationResult) -> str:
    agg = result.aggregate()
    headers = ["system", "n"] + [
        result.pesq_label if k == "pesq" else k.upper() for k in ALL_KEYS
    ]
    rows = [
        [system, str(scores["n"])] + [f"{scores[k]:.4f}" for k in ALL_KEYS]
        for system, scores in agg.items()
    ]
    parts = ["Aggregate scores", _format_table(headers, rows)]
    if result.exclusions:
        parts.append("")
        parts.append("Excluded utterances")
        parts.append(
            _format_table(
                ["id", "system", "reason"],
                [[e["id"], e["system"], e["reason"]] for e in result.exclusions],
            )
        )
    else:
        parts.append("")
        parts.append("Excluded utterances: none")
    parts.append("")
    parts.append(DESK_SCALE_DISCLAIMER)
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# comparison report
# ---------------------------------------------------------------------------

def build_comparison(results: list[EvaluationResult]) -> tuple:
    """Merge evaluations into (aggregate mapping, pesq label, best-flag mapping).

    The PESQ provenance label must agree across inputs: comparing surrogate
    scores against plugin scores would be meaningless.
    """
    if not results:
        raise ValueError("no evaluation results to report")
    labels = {r.pesq_label for r in results}
    if len(labels) > 1:
        raise ValueError(
            f"refusing to compare metrics with different PESQ sources: {sorted(labels)}"
        )
    merged = {}
    for result in results:
        for system, scores in result.aggregate().items():
            # the same baseline (typically "noisy") evaluated in several runs
            # collapses into one row; same name with different scores gets a
            # disambiguating suffix instead of silently shadowing
            name = system
            k = 2
            while name in merged and merged[name] != scores:
                name = f"{system}#{k}"
                k += 1
            merged[name] = scores
    best = {}
    for key in REPORT_KEYS:
        top = max(scores[key] for scores in merged.values())
        best[key] = {s for s, scores in merged.items() if scores[key] == top}
    return merged, labels.pop(), best


def render_report_text(merged: dict, pesq_label: str, best: dict) -> str:
    headers = ["system", "n"] + [
        pesq_label if k == "pesq" else k.upper() for k in REPORT_KEYS
    ]
    rows = []
    for system, scores in merged.items():
        cells = [system, str(scores["n"])]
        for key in REPORT_KEYS:
            flag = "*" if system in best[key] else " "
            cells.append(f"{scores[key]:.4f}{flag}")
        rows.append(cells)
    table = _format_table(headers, rows)
    return (
        "Model comparison (* = best per column; ties flag all)\n"
        + table
        + "\n\n"
        + DESK_SCALE_DISCLAIMER
        + "\n"
    )


def write_report_tsv(merged: dict, pesq_label: str, best: dict, path):
    headers = ["system", "n"] + [
        pesq_label if k == "pesq" else k.upper() for k in REPORT_KEYS
    ] + ["best_in"]
    lines = ["\t".join(headers)]
    for system, scores in merged.items():
        flags = ",".join(k.upper() for k in REPORT_KEYS if system in best[k])
        lines.append(
            "\t".join(
                [system, str(scores["n"])]
                + [f"{scores[k]:.6f}" for k in REPORT_KEYS]
                + [flags]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def render_report_figure(merged: dict, pesq_label: str, path):
    """One bar chart per report column, side by side, saved as a PNG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    systems = list(merged)
    fig, axes = plt.subplots(1, len(REPORT_KEYS), figsize=(3.2 * len(REPORT_KEYS), 3.6))
    for ax, key in zip(np.atleast_1d(axes), REPORT_KEYS):
        values = [merged[s][key] for s in systems]
        ax.bar(range(len(systems)), values, color="#4878a8")
        ax.set_xticks(range(len(systems)))
        ax.set_xticklabels(systems, rotation=45, ha="right", fontsize=8)
        ax.set_title(pesq_label if key == "pesq" else key.upper(), fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle("Aggregate objective scores", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_report(metric_files: list, out_dir) -> dict:
    """Read evaluation TSVs and write report.tsv / report.txt / report.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [read_metrics_tsv(p) for p in metric_files]
    merged, label, best = build_comparison(results)
    write_report_tsv(merged, label, best, out_dir / "report.tsv")
    (out_dir / "report.txt").write_text(render_report_text(merged, label, best))
    render_report_figure(merged, label, out_dir / "report.png")
    return {"systems": list(merged), "pesq_label": label, "out_dir": str(out_dir)}


# ---------------------------------------------------------------------------
# training-log figure
# ---------------------------------------------------------------------------

def render_loss_curves(log_path, out_path):
    """Plot per-step loss totals from a training JSONL log."""
    import json

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps, d_vals, g_vals = [], [], []
    with Path(log_path).open() as fh:
        for line in fh:
            row = json.loads(line)
            if row.get("summary"):
                continue
            steps.append(row["step"])
            g_vals.append(row.get("g_total"))
            d_vals.append(row.get("d_total"))
    if not steps:
        raise ValueError(f"{log_path}: no step records to plot")
    fig, ax = plt.subplots(figsize=(7, 4))
    if any(v is not None for v in g_vals):
        ax.plot(steps, [np.nan if v is None else v for v in g_vals], label="generator total")
    if any(v is not None for v in d_vals):
        ax.plot(steps, [np.nan if v is None else v for v in d_vals], label="discriminator total")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
