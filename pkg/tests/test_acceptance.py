"""End-to-end acceptance gate.

Runs the full pipeline on the default config for three master seeds and
checks every headline claim at its stated tolerance, printing one verdict
line per criterion (see conftest). Pipeline artifacts are cached under the
system temp dir keyed by config hash, so reruns of this suite reuse finished
runs; delete the cache directory (or set GIST_ACCEPTANCE_DIR) for a cold run.
"""

import json
import math
import os
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gist import cbjt, ctr, nn
from gist.cbjt import TwoTowerEncoder, UnionModel, alignment_step, contrastive_step
from gist.config import Config, default_config
from gist.ctr import CtrConfig, asi_histogram, build_inputs, create_ctr_model
from gist.data import SearchResult, TrainingSample, UserRecord
from gist.metrics import auc, auc_gain
from gist.pipeline import Paths, run_pipeline
from gist.report import load_report
from gist.search import build_index, soft_search

SEEDS = (7, 17, 27)
KS = ("1", "10", "100")


def _unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cache_root() -> Path:
    env = os.environ.get("GIST_ACCEPTANCE_DIR")
    if env:
        return Path(env)
    return Path(tempfile.gettempdir()) / f"gist-acceptance-{default_config().hash()}"


@pytest.fixture(scope="session")
def runs():
    """One finished default-config pipeline per master seed."""
    out = []
    for seed in SEEDS:
        cfg = default_config()
        cfg = replace(cfg, world=replace(cfg.world, seed=seed))
        run_dir = _cache_root() / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        report_path = run_pipeline(cfg, run_dir)
        doc = load_report(report_path)
        runtime = json.loads((run_dir / "runtime.json").read_text())
        out.append({"seed": seed, "dir": run_dir, "metrics": doc["metrics"],
                    "runtime": runtime})
    return out


def _mean_auc(runs, name):
    return float(np.mean([r["metrics"]["variants"][name]["auc"] for r in runs]))


class TestOrderings:
    def test_variant_ordering_and_budget(self, runs, acceptance_log):
        order = ["gist", "sim_soft_attn", "sim_soft_pool", "sim_hard", "din"]
        means = {v: _mean_auc(runs, v) for v in order}
        chain = all(means[a] > means[b] for a, b in zip(order, order[1:]))
        gain = auc_gain(means["gist"], means["din"])
        worst = max(sum(r["runtime"].values()) for r in runs)
        ok = chain and gain >= 0.3 and worst <= 900.0
        detail = (" ".join(f"{v}={means[v]:.4f}" for v in order)
                  + f" gain={gain:.3f}% worst_runtime={worst:.0f}s")
        acceptance_log(1, "mean test AUC ordering + gain + budget", ok, detail)
        assert ok, detail

    def test_retrieval_ordering_by_representation(self, runs, acceptance_log):
        bad = []
        for r in runs:
            rec = r["metrics"]["recall"]
            for k in KS:
                if not (rec["joint"][k] > rec["content"][k] > rec["behavior"][k]):
                    bad.append(f"seed{r['seed']}@K={k}")
        ok = not bad
        sample = runs[0]["metrics"]["recall"]
        detail = ("joint/content/behavior@100="
                  + "/".join(f"{sample[rep]['100']:.3f}" for rep in
                             ("joint", "content", "behavior"))
                  + (f" violations={bad}" if bad else " all seeds, all K"))
        acceptance_log(2, "Recall joint > content > behavior", ok, detail)
        assert ok, detail

    def test_pair_source_end_to_end(self, runs, acceptance_log):
        esu = _mean_auc(runs, "gist")
        cooc = _mean_auc(runs, "gist_cooc")
        wins = sum(r["metrics"]["variants"]["gist"]["auc"]
                   > r["metrics"]["variants"]["gist_cooc"]["auc"] for r in runs)
        ok = esu > cooc
        detail = f"esu={esu:.4f} cooc={cooc:.4f} per-seed wins {wins}/{len(runs)}"
        acceptance_log(3, "guided pairs beat co-occurrence pairs", ok, detail)
        assert ok, detail

    def test_fusion_ablation_recall(self, runs, acceptance_log):
        bad = []
        for r in runs:
            fus = r["metrics"]["fusion_ablation"]
            if not (fus["full"]["100"] > fus["no_gate"]["100"]
                    and fus["full"]["100"] > fus["concat"]["100"]):
                bad.append(f"seed{r['seed']}")
        ok = not bad
        fus = runs[0]["metrics"]["fusion_ablation"]
        detail = ("full/no_gate/concat@100="
                  + "/".join(f"{fus[m]['100']:.3f}" for m in
                             ("full", "no_gate", "concat"))
                  + (f" violations={bad}" if bad else " all seeds"))
        acceptance_log(4, "gate and outer product both matter", ok, detail)
        assert ok, detail

    def test_cold_item_gains(self, runs, acceptance_log):
        low = float(np.mean([r["metrics"]["grouped"]["low_gain"] for r in runs]))
        high = float(np.mean([r["metrics"]["grouped"]["high_gain"] for r in runs]))
        ok = low >= high
        detail = f"low={low:.3f}% high={high:.3f}%"
        acceptance_log(5, "low-interaction gain >= high", ok, detail)
        assert ok, detail


class TestFormulas:
    def test_gain_formula_values(self, acceptance_log):
        a = auc_gain(0.7687, 0.7666)
        b = auc_gain(0.7720, 0.7711)
        ok = abs(a - 0.274) <= 0.002 and abs(b - 0.117) <= 0.002
        detail = f"{a:.4f}% and {b:.4f}%"
        acceptance_log(6, "published gain values reproduced", ok, detail)
        assert ok, detail

    def test_gradient_suite(self, acceptance_log):
        errs = {}
        rng = np.random.default_rng(9)
        enc = TwoTowerEncoder.create("content", 4, 5, 3, rng)
        va, vb = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        errs["content"] = nn.grad_check(lambda: contrastive_step(enc, va, vb), enc.params())

        rng = np.random.default_rng(6)
        enc = TwoTowerEncoder.create("behavior", 4, 5, 3, rng)
        va, vb = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        tgt = rng.normal(size=(6, 3))
        errs["behavior"] = nn.grad_check(
            lambda: alignment_step(enc, va, vb, tgt), enc.params())

        rng = np.random.default_rng(11)
        union = UnionModel.create(4, rng, mode="full")
        blocks = [nn.l2_normalize_rows(rng.normal(size=(6, 4))) for _ in range(4)]
        errs["union"] = nn.grad_check(
            lambda: cbjt.union_step(union, *blocks), union.params())

        errs["ctr"] = self._ctr_grad_err()
        ok = all(e < 1e-4 for e in errs.values())
        detail = " ".join(f"{k}={v:.2e}" for k, v in errs.items())
        acceptance_log(7, "gradient checks under 1e-4", ok, detail)
        assert ok, detail

    @staticmethod
    def _ctr_grad_err():
        rng = np.random.default_rng(4)
        users = {
            i: UserRecord(id=i, profile_features=[int(rng.integers(3)), int(rng.integers(2))])
            for i in range(5)
        }
        cfg = CtrConfig(
            item_dim=4, user_dim=3, profile_dim=2, asi_dim=3, hist_dim=4,
            att_hidden=5, top_hidden=[6], m1=6, m2=3, hist_buckets=3,
            epochs=1, batch=4, lr=1e-2, target_history_cap=8,
        )
        tgt_ids = [100, 101, 102, 103]
        samples = []
        for i in range(6):
            n_h = int(rng.integers(0, 5))
            n_k = int(rng.integers(1, 6)) if i != 3 else 0
            hits, seen = [], set()
            for _ in range(n_k):
                item = int(rng.choice(10))
                if item not in seen:
                    seen.add(item)
                    hits.append((item, float(rng.uniform(-1, 1))))
            samples.append(TrainingSample(
                user=int(rng.integers(5)),
                target_item=int(rng.choice(tgt_ids)),
                target_history=[int(rng.choice(tgt_ids)) for _ in range(n_h)],
                search_result=SearchResult(target=0, hits=hits),
                label=int(rng.integers(2)),
                timestamp=i,
            ))
        model = create_ctr_model(cfg, 5, [3, 2], tgt_ids, list(range(10)), 4,
                                 variant="gist", asi="score+dist")
        inp = build_inputs(model, samples, users)
        return nn.grad_check(
            lambda: ctr._step(model, inp, np.arange(len(samples))), model.params())

    def test_search_and_auc_oracles(self, acceptance_log):
        rng = np.random.default_rng(0)
        n, d, k = 1200, 16, 100
        ids = np.arange(n, dtype=np.int64)
        vecs = _unit_rows(rng, n, d)
        idx = build_index(ids, vecs)
        search_ok = True
        for _ in range(100):
            target = int(rng.integers(n))
            seq = [int(x) for x in rng.integers(0, n, size=1000)]
            got = soft_search(idx, target, seq, k).hits
            want = self._naive_soft(ids, vecs, target, seq, k)
            if [i for i, _ in got] != [i for i, _ in want]:
                search_ok = False
                break
            if not np.allclose([s for _, s in got], [s for _, s in want], atol=1e-12):
                search_ok = False
                break

        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, size=500)
        labels[0], labels[1] = 0, 1
        scores = np.round(rng.uniform(size=500), 2)
        fast = auc(labels, scores)
        slow = self._pairwise_auc(labels, scores)
        auc_err = abs(fast - slow)
        ok = search_ok and auc_err <= 1e-12
        detail = f"search exact on 100 cases={search_ok} auc_err={auc_err:.1e}"
        acceptance_log(8, "search and AUC match brute-force oracles", ok, detail)
        assert ok, detail

    @staticmethod
    def _naive_soft(ids, vecs, target, seq, k):
        # independent oracle: python-loop cosine, full sort, dedup keep first
        row_of = {int(i): r for r, i in enumerate(ids)}
        seen, dedup = set(), []
        for item in seq:
            if item not in seen:
                seen.add(item)
                dedup.append(item)
        t = vecs[row_of[target]]
        scored = [
            (item, sum(float(a) * float(b) for a, b in zip(vecs[row_of[item]], t)))
            for item in dedup
        ]
        scored.sort(key=lambda p: (-p[1], p[0]))
        return scored[:k]

    @staticmethod
    def _pairwise_auc(labels, scores):
        pos = [s for l, s in zip(labels, scores) if l == 1]
        neg = [s for l, s in zip(labels, scores) if l == 0]
        total = 0.0
        for p in pos:
            for q in neg:
                total += 1.0 if p > q else (0.5 if p == q else 0.0)
        return total / (len(pos) * len(neg))

    def test_analytic_units(self, acceptance_log):
        one, *_ = nn.info_nce(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), 0.0)
        eye = np.array([[1.0, 0.0], [0.0, 1.0]])
        same, *_ = nn.info_nce(eye, eye, 0.0)
        swapped, *_ = nn.info_nce(eye, eye[::-1].copy(), 0.0)
        rng = np.random.default_rng(2)
        union = UnionModel.create(5, rng, mode="full")
        for _, p in union.gate_ct.param_items("g"):
            p[...] = 0.0
        for _, p in union.gate_bh.param_items("g"):
            p[...] = 0.0
        x = rng.normal(size=(4, 5))
        y = rng.normal(size=(4, 5))
        gx, gy = cbjt.gate_vectors(union, x, y)
        hist = asi_histogram(np.array([0.9, 0.1, -0.2]), 4)

        checks = {
            "single-pair": abs(one) < 1e-9,
            "identity": abs(same - math.log(1 + math.e ** -1)) < 1e-4,
            "swapped": abs(swapped - math.log(1 + math.e)) < 1e-4,
            "gate-zero": bool(np.array_equal(gx, x) and np.array_equal(gy, y)),
            "histogram": hist.tolist() == [0, 1, 1, 1],
        }
        ok = all(checks.values())
        detail = f"N=2 losses {same:.5f}/{swapped:.5f}; " + " ".join(
            k for k, v in checks.items() if not v) if not ok else \
            f"N=2 losses {same:.5f}/{swapped:.5f}"
        acceptance_log(10, "hand-derived unit values", ok, detail)
        assert ok, (checks, detail)


class TestPipelineContracts:
    def test_store_corruption_cannot_leak(self, tmp_path, acceptance_log):
        from test_pipeline import tiny_config

        out = tmp_path / "run"
        run_pipeline(tiny_config(), out)
        paths = Paths(out)
        before = paths.preds("gist").read_bytes()

        ids, vecs = [], []
        with open(paths.rep_store("joint")) as fh:
            for line in fh:
                rec = json.loads(line)
                ids.append(rec["item"])
                vecs.append(rec["rep"])
        rng = np.random.default_rng(99)
        garbage = _unit_rows(rng, len(ids), len(vecs[0]))
        with open(paths.rep_store("joint"), "w") as fh:
            for item, row in zip(ids, garbage):
                fh.write(json.dumps({"item": item, "rep": list(row)}) + "\n")

        paths.preds("gist").unlink()
        (paths.ctr / "gist_meta.json").unlink()
        paths.ctr_done.unlink()
        run_pipeline(tiny_config(), out, stages=["train-ctr"])
        after = paths.preds("gist").read_bytes()
        ok = after == before
        acceptance_log(9, "re-ranking never reads the store", ok,
                       f"{len(before)} pred bytes identical" if ok else "preds changed")
        assert ok

    def test_sweep_artifacts(self, runs, acceptance_log):
        r = runs[0]
        sweep = r["metrics"]["theta_sweep"]
        ticks = r["metrics"]["attention_by_tick"]
        fig_dir = r["dir"] / "figures"
        emitted = (
            sweep["theta"] == [0.2, 0.3, 0.4, 0.5]
            and len(ticks["tick"]) > 0
            and (fig_dir / "theta_sweep.png").exists()
            and (fig_dir / "attention_by_tick.png").exists()
        )
        # curve shape is reported, never asserted
        rec = [x for x in sweep["recall_at_10"] if x is not None]
        shape = "decreasing" if rec == sorted(rec, reverse=True) else (
            "increasing" if rec == sorted(rec) else "non-monotone")
        att = ticks["mean_max_attention"]
        att_shape = "decreasing" if att == sorted(att, reverse=True) else (
            "increasing" if att == sorted(att) else "non-monotone")
        detail = (f"recall@10 over theta {shape} {np.round(rec, 3).tolist()}, "
                  f"attention by tick {att_shape}")
        acceptance_log(11, "threshold sweep and tick curve emitted", emitted, detail)
        assert emitted, detail
