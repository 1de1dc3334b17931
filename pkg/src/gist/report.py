"""Metric report assembly: report.json, report.md, figures, curve dumps.

The JSON report has two top-level sections. `metrics` is a pure function of
the run artifacts, so reruns over the same artifacts reproduce it byte for
byte; `run` carries timing and provenance, which legitimately vary.
"""

from __future__ import annotations

import datetime
import json
import shutil
from pathlib import Path

import numpy as np

from .cbjt import load_pairs
from .config import Config
from .ctr import load_preds
from .data import TARGET, load_bundle
from .metrics import auc, auc_gain, grouped_gain, recall_at_k
from .search import load_rep_store

MAIN_VARIANTS = ("din", "sim_hard", "sim_soft_pool", "sim_soft_attn", "gist")
ASI_ABLATION = ("gist_off", "gist_score", "gist")
REPRESENTATIONS = ("content", "behavior", "joint")
FUSION_MODES = (("full", "joint"), ("no_gate", "joint_no_gate"), ("concat", "joint_concat"))


def _read_csv(path: Path) -> list[dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def build_report(cfg: Config, paths) -> dict:
    from .pipeline import stage_seeds  # deferred: pipeline imports this module

    ds = load_bundle(paths.dataset)
    runs = list(json.loads(paths.ctr_done.read_text()))

    preds = {run: load_preds(paths.preds(run)) for run in runs}
    _, base_labels, _ = preds[runs[0]]
    for run, (_, labels, _) in preds.items():
        if not np.array_equal(labels, base_labels):
            raise ValueError(f"test labels disagree between {runs[0]} and {run}")
    aucs = {run: auc(labels, scores) for run, (_, labels, scores) in preds.items()}
    base = cfg.eval.base_variant
    variants = {
        run: {"auc": aucs[run], "gain_vs_base": auc_gain(aucs[run], aucs[base])}
        for run in runs
    }

    eval_pairs = [(p.target, p.best) for p in load_pairs(paths.cbjt / "pairs_esu_eval.csv")]
    recall: dict[str, dict[str, float]] = {}
    for rep in REPRESENTATIONS:
        ids, vecs = load_rep_store(paths.rep_store(rep))
        recall[rep] = {
            str(k): recall_at_k(ids, vecs, eval_pairs, k) for k in cfg.eval.recall_ks
        }
    fusion: dict[str, dict[str, float]] = {}
    for mode, store in FUSION_MODES:
        ids, vecs = load_rep_store(paths.rep_store(store))
        fusion[mode] = {
            str(k): recall_at_k(ids, vecs, eval_pairs, k) for k in cfg.eval.recall_ks
        }

    target_items = [
        int(row["target_item"]) for row in _read_csv(paths.ctr / "gist_targets.csv")
    ]
    count_of = {it.id: it.interaction_count for it in ds.items if it.domain == TARGET}
    split = float(np.median(np.array(sorted(count_of.values()), dtype=np.float64)))
    low_gain, high_gain = grouped_gain(
        target_items, base_labels, preds["gist"][2], preds["sim_soft_attn"][2],
        count_of, split=split,
    )

    sweep_rows = _read_csv(paths.cbjt / "theta_sweep.csv")
    theta_sweep = {
        "theta": [float(r["theta"]) for r in sweep_rows],
        "n_pairs": [int(r["n_pairs"]) for r in sweep_rows],
        "recall_at_10": [
            float(r["recall_at_10"]) if r["recall_at_10"] else None for r in sweep_rows
        ],
    }
    tick_rows = _read_csv(paths.cbjt / "attention_by_tick.csv")
    attention_by_tick = {
        "tick": [int(r["tick"]) for r in tick_rows],
        "mean_max_attention": [float(r["mean_max_attention"]) for r in tick_rows],
    }

    metrics = {
        "config_hash": cfg.hash(),
        "base_variant": base,
        "variants": variants,
        "recall": recall,
        "fusion_ablation": fusion,
        "grouped": {"low_gain": low_gain, "high_gain": high_gain, "split": split},
        "theta_sweep": theta_sweep,
        "attention_by_tick": attention_by_tick,
        "n_esu_pairs": len(load_pairs(paths.cbjt / "pairs_esu.csv")),
        "n_eval_pairs": len(eval_pairs),
        "n_test_samples": int(len(base_labels)),
    }
    run_info = {
        "master_seed": cfg.world.seed,
        "seeds": stage_seeds(cfg.world.seed),
        "stage_seconds": (
            json.loads(paths.runtime.read_text()) if paths.runtime.exists() else {}
        ),
        "ctr_seconds": json.loads(paths.ctr_done.read_text()),
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    doc = {"metrics": metrics, "run": run_info}
    paths.report_json.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (paths.out / "report.md").write_text(render_markdown(cfg, metrics, run_info))
    render_figures(paths, metrics)
    return doc


def load_report(path: str | Path) -> dict:
    """Read a report and re-derive its gain fields from the stored AUCs;
    any disagreement means the file was edited or corrupted."""
    doc = json.loads(Path(path).read_text())
    metrics = doc["metrics"]
    base = metrics["variants"][metrics["base_variant"]]["auc"]
    for run, entry in metrics["variants"].items():
        want = auc_gain(entry["auc"], base)
        if entry["gain_vs_base"] != want:
            raise ValueError(
                f"report gain for {run!r} inconsistent with its AUC fields: "
                f"{entry['gain_vs_base']} vs recomputed {want}"
            )
    return doc


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _variant_table(metrics: dict, names) -> list[str]:
    base = metrics["base_variant"]
    lines = [f"| variant | test AUC | gain vs {base} (%) |", "| --- | --- | --- |"]
    for name in names:
        entry = metrics["variants"][name]
        lines.append(f"| {name} | {entry['auc']:.4f} | {entry['gain_vs_base']:+.3f} |")
    return lines


def _recall_table(block: dict, rows) -> list[str]:
    ks = list(next(iter(block.values())))
    lines = ["| representation | " + " | ".join(f"Recall@{k}" for k in ks) + " |",
             "| --- |" + " --- |" * len(ks)]
    for name in rows:
        cells = " | ".join(f"{block[name][k]:.4f}" for k in ks)
        lines.append(f"| {name} | {cells} |")
    return lines


def render_markdown(cfg: Config, metrics: dict, run_info: dict) -> str:
    g = metrics["grouped"]
    sweep = metrics["theta_sweep"]
    ticks = metrics["attention_by_tick"]
    out = [
        "# Run report",
        "",
        f"Config hash `{metrics['config_hash']}`, master seed {run_info['master_seed']}.",
        f"Test samples: {metrics['n_test_samples']}; guidance pairs: "
        f"{metrics['n_esu_pairs']} ({metrics['n_eval_pairs']} held out).",
        "",
        "## CTR comparison",
        "",
        *_variant_table(metrics, [v for v in MAIN_VARIANTS if v in metrics["variants"]]),
        "",
        "## Similarity feature ablation",
        "",
        *_variant_table(metrics, [v for v in ASI_ABLATION if v in metrics["variants"]]),
        "",
        "## Guidance pair source",
        "",
        *_variant_table(metrics, [v for v in ("gist", "gist_cooc") if v in metrics["variants"]]),
        "",
        "## Retrieval quality by representation",
        "",
        "Held-out guidance pairs as ground truth.",
        "",
        *_recall_table(metrics["recall"], REPRESENTATIONS),
        "",
        "## Fusion ablation",
        "",
        *_recall_table(metrics["fusion_ablation"], [m for m, _ in FUSION_MODES]),
        "",
        "## Gains by item popularity",
        "",
        f"GIST vs soft attention baseline, split at median target interaction count ({g['split']:.1f}):",
        f"low-interaction group {g['low_gain']:+.3f}%, high-interaction group {g['high_gain']:+.3f}%.",
        "",
        "## Guidance threshold sweep",
        "",
        "| threshold | pairs | Recall@10 |",
        "| --- | --- | --- |",
    ]
    for theta, n, r in zip(sweep["theta"], sweep["n_pairs"], sweep["recall_at_10"]):
        cell = f"{r:.4f}" if r is not None else "n/a"
        out.append(f"| {theta} | {n} | {cell} |")
    out += [
        "",
        "## Attention strength by tick",
        "",
        "| tick | mean max attention |",
        "| --- | --- |",
    ]
    for tick, val in zip(ticks["tick"], ticks["mean_max_attention"]):
        out.append(f"| {tick} | {val:.4f} |")
    out += [
        "",
        "## Runtime",
        "",
        "| stage | seconds |",
        "| --- | --- |",
    ]
    for stage, seconds in run_info["stage_seconds"].items():
        out.append(f"| {stage} | {seconds} |")
    return "\n".join(out) + "\n"


def render_figures(paths, metrics: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = paths.out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    shutil.copy(paths.cbjt / "theta_sweep.csv", fig_dir / "theta_sweep.csv")
    shutil.copy(paths.cbjt / "attention_by_tick.csv", fig_dir / "attention_by_tick.csv")

    sweep = metrics["theta_sweep"]
    known = [(t, r) for t, r in zip(sweep["theta"], sweep["recall_at_10"]) if r is not None]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if known:
        ax.plot([t for t, _ in known], [r for _, r in known], marker="o")
    ax.set_xlabel("pair score threshold")
    ax.set_ylabel("Recall@10, held-out pairs")
    ax.set_title("Guidance threshold sweep")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(fig_dir / "theta_sweep.png", dpi=120)
    plt.close(fig)

    ticks = metrics["attention_by_tick"]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ticks["tick"], ticks["mean_max_attention"], marker="o")
    ax.set_xlabel("tick")
    ax.set_ylabel("mean max attention")
    ax.set_title("Attention strength over time")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(fig_dir / "attention_by_tick.png", dpi=120)
    plt.close(fig)
