"""End-to-end orchestration: world gen to metric report, resumable per stage.

Every stage reads its inputs from disk and writes its outputs to disk, so any
prefix of completed stages can be reused. A stage is considered done when its
marker artifact exists; delete the artifact to force a redo. All randomness
derives from one master seed with fixed per-stage offsets, so a rerun from any
stage reproduces the original run exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cbjt, ctr, nn, report
from .config import Config
from .data import (
    SOURCE,
    TARGET,
    Dataset,
    clicked_history,
    history_before,
    load_bundle,
    save_bundle,
    split_temporal,
)
from .metrics import recall_at_k
from .search import (
    Impression,
    batch_search,
    load_index,
    load_search_log,
    write_rep_store,
    write_search_log,
)
from .simgen import gen_world

STAGES = ("gen", "train-cbjt", "export-reps", "build-index", "search", "train-ctr", "eval")

# (run name, model variant, asi mode, search log) for every CTR training run.
# The first five reproduce the main comparison; the rest feed the ablation
# tables. Order is load-bearing: run seeds are assigned by position.
CTR_RUNS = [
    ("din", "din", "off", None),
    ("sim_hard", "sim_hard", "off", "hard"),
    ("sim_soft_pool", "sim_soft_pool", "off", "content"),
    ("sim_soft_attn", "sim_soft_attn", "off", "content"),
    ("gist", "gist", "score+dist", "joint"),
    ("gist_score", "gist", "score", "joint"),
    ("gist_off", "gist", "off", "joint"),
    ("gist_cooc", "gist", "score+dist", "joint_cooc"),
]

REP_STORES = ("content", "behavior", "joint", "joint_cooc", "joint_no_gate", "joint_concat")
SEARCHED_STORES = ("content", "joint", "joint_cooc")
BASE_VARIANT = "din"


def stage_seeds(master: int) -> dict[str, int]:
    seeds = {
        "world": master,
        "content": master + 1,
        "source": master + 2,
        "distill": master + 3,
        "behavior": master + 4,
        "pair_split": master + 5,
        "union": master + 6,
    }
    for i, (name, _, _, _) in enumerate(CTR_RUNS):
        seeds[f"ctr.{name}"] = master + 10 + i
    return seeds


@dataclass
class Paths:
    out: Path

    def __post_init__(self):
        self.out = Path(self.out)

    @property
    def config_used(self) -> Path:
        return self.out / "config_used.json"

    @property
    def dataset(self) -> Path:
        return self.out / "dataset"

    @property
    def cbjt(self) -> Path:
        return self.out / "cbjt"

    @property
    def reps(self) -> Path:
        return self.out / "reps"

    def rep_store(self, name: str) -> Path:
        return self.reps / f"{name}.jsonl"

    @property
    def index_manifest(self) -> Path:
        return self.out / "index" / "manifest.json"

    @property
    def search(self) -> Path:
        return self.out / "search"

    def search_log(self, name: str) -> Path:
        return self.search / f"log_{name}.csv"

    @property
    def ctr(self) -> Path:
        return self.out / "ctr"

    def preds(self, run: str) -> Path:
        return self.ctr / f"{run}_preds.csv"

    @property
    def ctr_done(self) -> Path:
        return self.ctr / "done.json"

    @property
    def runtime(self) -> Path:
        return self.out / "runtime.json"

    @property
    def report_json(self) -> Path:
        return self.out / "report.json"

    # stage markers, in pipeline order
    def marker(self, stage: str) -> Path:
        return {
            "gen": self.dataset / "meta.json",
            "train-cbjt": self.cbjt / "theta_sweep.csv",
            "export-reps": self.rep_store(REP_STORES[-1]),
            "build-index": self.index_manifest,
            "search": self.search_log("joint_cooc"),
            "train-ctr": self.ctr_done,
            "eval": self.report_json,
        }[stage]


def _record_runtime(paths: Paths, stage: str, seconds: float) -> None:
    data = {}
    if paths.runtime.exists():
        data = json.loads(paths.runtime.read_text())
    data[stage] = round(seconds, 3)
    paths.runtime.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_config_used(cfg: Config, paths: Paths) -> None:
    blob = {"hash": cfg.hash(), "config": cfg.to_dict()}
    if paths.config_used.exists():
        prior = json.loads(paths.config_used.read_text())
        if prior["hash"] != blob["hash"]:
            raise RuntimeError(
                f"output dir {paths.out} holds artifacts for config {prior['hash']}, "
                f"current config is {blob['hash']}; use a fresh --out"
            )
        return
    paths.out.mkdir(parents=True, exist_ok=True)
    paths.config_used.write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_gen(cfg: Config, paths: Paths) -> None:
    seeds = stage_seeds(cfg.world.seed)
    ds, _ = gen_world(replace(cfg.world, seed=seeds["world"]))
    save_bundle(paths.dataset, ds)


def _load_dataset(paths: Paths) -> Dataset:
    return load_bundle(paths.dataset)


def _source_split(ds: Dataset, cfg: Config):
    src = [e for e in ds.events if e.domain == SOURCE]
    return split_temporal(src, cfg.eval.train_fraction)


def _target_split(ds: Dataset, cfg: Config):
    tgt = [e for e in ds.events if e.domain == TARGET]
    return split_temporal(tgt, cfg.eval.train_fraction)


def _split_pairs(pairs, holdout_frac: float, seed: int):
    """Deterministic train/eval split over canonical pair order."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_eval = int(len(pairs) * holdout_frac)
    eval_idx = set(int(i) for i in order[:n_eval])
    train = [p for i, p in enumerate(pairs) if i not in eval_idx]
    held = [p for i, p in enumerate(pairs) if i in eval_idx]
    return train, held


def stage_train_cbjt(cfg: Config, paths: Paths) -> None:
    seeds = stage_seeds(cfg.world.seed)
    ds = _load_dataset(paths)
    src_train, _ = _source_split(ds, cfg)
    histories = clicked_history([e for e in ds.events if e.domain == SOURCE], SOURCE)
    c = cfg.cbjt
    paths.cbjt.mkdir(parents=True, exist_ok=True)
    curves: dict[str, list[float]] = {}
    clock: dict[str, float] = {}
    t0 = time.time()

    def lap(name: str) -> None:
        nonlocal t0
        clock[name] = round(time.time() - t0, 3)
        t0 = time.time()

    content, curves["content"] = cbjt.train_content_encoder(ds.items, c, seeds["content"])
    nn.save_params(paths.cbjt / "content", content.params())
    lap("content")

    source, curves["source"] = cbjt.train_source_model(
        src_train, ds.items, len(ds.users), c, seeds["source"]
    )
    lap("source")
    behavior, curves["behavior"] = cbjt.train_behavior_encoder(ds.items, source, c, seeds["behavior"])
    nn.save_params(paths.cbjt / "behavior", behavior.params())
    lap("behavior")

    # distill once at the lowest threshold; higher thresholds are score filters
    theta_all = sorted(set(c.theta_sweep) | {c.theta_pair})
    distilled = cbjt.distill_esu_pairs(
        source, src_train, histories, min(theta_all), c, seeds["distill"]
    )
    lap("distill")
    with open(paths.cbjt / "attention_by_tick.csv", "w") as fh:
        fh.write("tick,mean_max_attention\n")
        for tick in sorted(distilled.mean_max_by_tick):
            fh.write(f"{tick},{distilled.mean_max_by_tick[tick]:.9f}\n")

    esu = [p for p in distilled.pairs if p.score >= c.theta_pair]
    cbjt.save_pairs(paths.cbjt / "pairs_esu.csv", esu)
    esu_train, esu_eval = _split_pairs(esu, c.pair_holdout_frac, seeds["pair_split"])
    cbjt.save_pairs(paths.cbjt / "pairs_esu_train.csv", esu_train)
    cbjt.save_pairs(paths.cbjt / "pairs_esu_eval.csv", esu_eval)

    cooc = cbjt.cooc_pairs(src_train, c.cooc_window, n_pairs=len(esu))
    cbjt.save_pairs(paths.cbjt / "pairs_cooc.csv", cooc)
    cooc_train, _ = _split_pairs(cooc, c.pair_holdout_frac, seeds["pair_split"])

    ids, va, vb = cbjt.item_views(ds.items)
    ct = content.embed(va, vb)
    bh = behavior.embed(va, vb)

    unions = {}
    for mode in ("full", "no_gate", "concat"):
        unions[mode], curves[f"union_{mode}"] = cbjt.train_union_model(
            esu_train, ids, ct, bh, c, seeds["union"], mode=mode
        )
        nn.save_params(paths.cbjt / f"union_{mode}", unions[mode].params())
    union_cooc, curves["union_cooc"] = cbjt.train_union_model(
        cooc_train, ids, ct, bh, c, seeds["union"], mode="full"
    )
    nn.save_params(paths.cbjt / "union_cooc", union_cooc.params())
    lap("unions")

    with open(paths.cbjt / "curves.json", "w") as fh:
        json.dump(curves, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # guidance-threshold sweep: retrain the fusion per threshold, score
    # held-out pairs of that threshold at K=10 (marker artifact, written last)
    rows = []
    for theta in theta_all:
        pool = [p for p in distilled.pairs if p.score >= theta]
        tr, ev = _split_pairs(pool, c.pair_holdout_frac, seeds["pair_split"])
        if len({(p.target, p.best) for p in tr if p.target != p.best}) < 2 or not ev:
            rows.append((theta, len(pool), ""))  # too few pairs to measure
            continue
        if theta == c.theta_pair:
            # same pool, same split, same seed: the main fusion IS this point
            union_t = unions["full"]
        else:
            union_t, _ = cbjt.train_union_model(tr, ids, ct, bh, c, seeds["union"], mode="full")
        joint_t = cbjt.fuse(union_t, ct, bh)
        r10 = recall_at_k(ids, joint_t, [(p.target, p.best) for p in ev], k=10)
        rows.append((theta, len(pool), f"{r10:.9f}"))
    lap("theta_sweep")
    with open(paths.cbjt / "timings.json", "w") as fh:
        json.dump(clock, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths.cbjt / "theta_sweep.csv", "w") as fh:
        fh.write("theta,n_pairs,recall_at_10\n")
        for theta, n, r10 in rows:
            fh.write(f"{theta},{n},{r10}\n")


def _load_encoder(prefix: str, directory: Path, d_c: int, c) -> cbjt.TwoTowerEncoder:
    enc = cbjt.TwoTowerEncoder.create(prefix, d_c, c.tower_hidden, c.d_e, np.random.default_rng(0))
    _load_into(enc.params(), directory)
    return enc


def _load_union(directory: Path, c, mode: str) -> cbjt.UnionModel:
    union = cbjt.UnionModel.create(c.d_e, np.random.default_rng(0), mode=mode)
    _load_into(union.params(), directory)
    return union


def _load_into(params: dict[str, np.ndarray], directory: Path) -> None:
    stored = nn.load_params(directory)
    missing = set(params) - set(stored)
    if missing:
        raise ValueError(f"stored params at {directory} lack {sorted(missing)}")
    for key, arr in params.items():
        np.copyto(arr, stored[key])


def stage_export_reps(cfg: Config, paths: Paths) -> None:
    ds = _load_dataset(paths)
    c = cfg.cbjt
    d_c = ds.meta.d_c
    content = _load_encoder("content", paths.cbjt / "content", d_c, c)
    behavior = _load_encoder("behavior", paths.cbjt / "behavior", d_c, c)
    ids, va, vb = cbjt.item_views(ds.items)
    ct = content.embed(va, vb)
    bh = behavior.embed(va, vb)
    paths.reps.mkdir(parents=True, exist_ok=True)
    write_rep_store(paths.rep_store("content"), ids, ct)
    write_rep_store(paths.rep_store("behavior"), ids, bh)
    for store, directory, mode in (
        ("joint", "union_full", "full"),
        ("joint_cooc", "union_cooc", "full"),
        ("joint_no_gate", "union_no_gate", "no_gate"),
        ("joint_concat", "union_concat", "concat"),
    ):
        union = _load_union(paths.cbjt / directory, c, mode)
        write_rep_store(paths.rep_store(store), ids, cbjt.fuse(union, ct, bh))


def stage_build_index(cfg: Config, paths: Paths) -> None:
    manifest = {}
    for name in SEARCHED_STORES:
        index = load_index(paths.rep_store(name))
        manifest[name] = {
            "path": str(paths.rep_store(name)),
            "checksum": index.checksum,
            "n_items": int(len(index.ids)),
        }
    paths.index_manifest.parent.mkdir(parents=True, exist_ok=True)
    paths.index_manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _impressions(ds: Dataset, cfg: Config) -> list[Impression]:
    """One impression per target event: the user's source clicks before it."""
    src_hist = clicked_history([e for e in ds.events if e.domain == SOURCE], SOURCE)
    imps = []
    for e in ds.events:
        if e.domain != TARGET:
            continue
        seq = history_before(src_hist.get(e.user, []), e.timestamp, cfg.world.lifelong_cap)
        imps.append(Impression(user=e.user, target=e.item, timestamp=e.timestamp, sequence=seq))
    return imps


def stage_search(cfg: Config, paths: Paths) -> None:
    ds = _load_dataset(paths)
    imps = _impressions(ds, cfg)
    k = cfg.search.top_k
    paths.search.mkdir(parents=True, exist_ok=True)
    all_failures: dict[str, list[str]] = {}

    category_of = {it.id: it.category for it in ds.items}
    records, failures = batch_search(None, imps, k, mode="hard", category_of=category_of)
    write_search_log(paths.search_log("hard"), records)
    all_failures["hard"] = failures

    for name in SEARCHED_STORES:
        index = load_index(paths.rep_store(name))
        records, failures = batch_search(index, imps, k, mode="soft")
        write_search_log(paths.search_log(name), records)
        all_failures[name] = failures

    n_failed = sum(len(v) for v in all_failures.values())
    if n_failed:
        with open(paths.search / "failures.txt", "w") as fh:
            for name, failures in sorted(all_failures.items()):
                for line in failures:
                    fh.write(f"{name}: {line}\n")
        raise RuntimeError(
            f"{n_failed} impressions failed to search; see {paths.search / 'failures.txt'}"
        )


def stage_train_ctr(cfg: Config, paths: Paths) -> None:
    seeds = stage_seeds(cfg.world.seed)
    ds = _load_dataset(paths)
    train_ev, test_ev = _target_split(ds, cfg)
    tgt_hist = clicked_history([e for e in ds.events if e.domain == TARGET], TARGET)
    users = {u.id: u for u in ds.users}
    tgt_ids = sorted(it.id for it in ds.items if it.domain == TARGET)
    src_ids = sorted(it.id for it in ds.items if it.domain == SOURCE)
    paths.ctr.mkdir(parents=True, exist_ok=True)

    logs: dict[str, list] = {}

    def log_for(name: str | None):
        if name is None:
            return None
        if name not in logs:
            logs[name] = load_search_log(paths.search_log(name))
        return logs[name]

    done = {}
    for run, variant, asi, log_name in CTR_RUNS:
        meta_path = paths.ctr / f"{run}_meta.json"
        if paths.preds(run).exists() and meta_path.exists():
            done[run] = json.loads(meta_path.read_text())
            continue
        t0 = time.time()
        log = log_for(log_name)
        train_samples = ctr.build_samples(train_ev, tgt_hist, log, cfg.ctr.target_history_cap)
        test_samples = ctr.build_samples(test_ev, tgt_hist, log, cfg.ctr.target_history_cap)
        model = ctr.create_ctr_model(
            cfg.ctr, len(ds.users), ds.meta.profile_vocab_sizes, tgt_ids, src_ids,
            seeds[f"ctr.{run}"], variant=variant, asi=asi,
        )
        train_inp = ctr.build_inputs(model, train_samples, users)
        curve = ctr.train_ctr(model, train_inp, cfg.ctr, seeds[f"ctr.{run}"] + 1)
        test_inp = ctr.build_inputs(model, test_samples, users)
        scores = ctr.predict_ctr(model, test_inp)
        ctr.write_preds(paths.preds(run), [s.label for s in test_samples], scores)
        with open(paths.ctr / f"{run}_targets.csv", "w") as fh:
            fh.write("sample_id,target_item\n")
            for i, s in enumerate(test_samples):
                fh.write(f"{i},{s.target_item}\n")
        meta = {
            "variant": variant,
            "asi": asi,
            "log": log_name,
            "n_train": len(train_samples),
            "n_test": len(test_samples),
            "final_loss": curve[-1],
            "loss_curve": curve,
            "seconds": round(time.time() - t0, 3),
        }
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        done[run] = meta
    # key order mirrors CTR_RUNS so downstream consumers see the run order
    paths.ctr_done.write_text(
        json.dumps({run: done[run]["seconds"] for run, *_ in CTR_RUNS}, indent=2) + "\n"
    )


def stage_eval(cfg: Config, paths: Paths) -> None:
    report.build_report(cfg, paths)


_STAGE_FNS = {
    "gen": stage_gen,
    "train-cbjt": stage_train_cbjt,
    "export-reps": stage_export_reps,
    "build-index": stage_build_index,
    "search": stage_search,
    "train-ctr": stage_train_ctr,
    "eval": stage_eval,
}


def run_pipeline(cfg: Config, out: str | Path, stages: list[str] | None = None) -> Path:
    """Run the stage chain; completed stages (marker artifact present) are
    skipped unless explicitly requested via `stages`. Returns the report path."""
    if stages is not None:
        unknown = set(stages) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stage(s): {sorted(unknown)}")
    paths = Paths(Path(out))
    paths.out.mkdir(parents=True, exist_ok=True)
    _write_config_used(cfg, paths)
    requested = set(STAGES if stages is None else stages)
    for stage in STAGES:
        if stage not in requested:
            continue
        marker = paths.marker(stage)
        if stages is None and marker.exists():
            continue
        t0 = time.time()
        try:
            _STAGE_FNS[stage](cfg, paths)
        except Exception as exc:
            raise RuntimeError(f"stage {stage} failed (artifacts under {paths.out})") from exc
        _record_runtime(paths, stage, time.time() - t0)
    return paths.report_json
