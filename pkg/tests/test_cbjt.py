import math
from dataclasses import replace

import numpy as np
import pytest

from gist import cbjt, metrics, nn
from gist.cbjt import (
    EsuPair,
    SourceModel,
    TwoTowerEncoder,
    UnionModel,
    alignment_step,
    compute_item_reps,
    contrastive_step,
    cooc_pairs,
    distill_esu_pairs,
    fuse,
    gate_vectors,
    item_views,
    load_pairs,
    row_map,
    save_pairs,
    select_pair,
    train_behavior_encoder,
    train_content_encoder,
    train_source_model,
    train_union_model,
    predict_source,
)
from gist.config import CbjtConfig, WorldConfig
from gist.data import SOURCE, clicked_history, tick_of
from gist.nn import Mlp
from gist.simgen import gen_world

SMALL_WORLD = WorldConfig(
    users=300,
    source_items=100,
    target_items=50,
    categories=6,
    source_events_per_user_tick=12,
    target_events_per_user_tick=1,
    ticks=7,
    seed=7,
)

SMALL = CbjtConfig(
    d_e=16,
    tower_hidden=16,
    content_epochs=25,
    content_batch=64,
    source_epochs=8,
    source_batch=128,
    source_history_cap=50,
    behavior_epochs=150,
    behavior_batch=128,
    union_epochs=30,
    union_batch=128,
    distill_max_impressions=1_000_000,
)


@pytest.fixture(scope="module")
def world():
    return gen_world(SMALL_WORLD)


@pytest.fixture(scope="module")
def content(world):
    ds, _ = world
    return train_content_encoder(ds.items, SMALL, seed=1)


@pytest.fixture(scope="module")
def source(world):
    ds, _ = world
    src = [e for e in ds.events if e.domain == SOURCE]
    train_ev = [e for e in src if tick_of(e.timestamp) < 6]
    test_ev = [e for e in src if tick_of(e.timestamp) == 6]
    model, curve = train_source_model(train_ev, ds.items, SMALL_WORLD.users, SMALL, seed=4)
    histories = clicked_history(src, SOURCE)
    return model, curve, train_ev, test_ev, histories


@pytest.fixture(scope="module")
def distilled(source):
    model, _, train_ev, _, histories = source
    return distill_esu_pairs(model, train_ev, histories, 0.4, SMALL, seed=5)


@pytest.fixture(scope="module")
def behavior(world, source):
    ds, _ = world
    model = source[0]
    return train_behavior_encoder(ds.items, model, SMALL, seed=6)


@pytest.fixture(scope="module")
def union_setup(world, content, behavior, distilled):
    ds, _ = world
    enc, benc = content[0], behavior[0]
    proto = UnionModel.create(SMALL.d_e, np.random.default_rng(0))
    ids, ct, bh, _ = compute_item_reps(enc, benc, proto, ds.items)
    union, curve = train_union_model(distilled.pairs, ids, ct, bh, SMALL, seed=7)
    union0, _ = train_union_model(distilled.pairs, ids, ct, bh, SMALL, seed=7, epochs=0)
    return ids, ct, bh, union, curve, union0


class TestContentEncoder:
    def test_loss_decreases(self, content):
        _, curve = content
        assert curve[-1] < curve[0]
        assert curve[-1] < 3.0

    def test_embeddings_are_unit_rows(self, world, content):
        ds, _ = world
        enc, _ = content
        _, va, vb = item_views(ds.items)
        emb = enc.embed(va, vb)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-12)

    def test_repeated_item_batch_gives_log_n(self, world, content):
        # all rows identical -> every pairwise logit equal -> uniform softmax
        ds, _ = world
        enc, _ = content
        _, va, vb = item_views(ds.items)
        loss, _ = contrastive_step(enc, np.repeat(va[:1], 8, 0), np.repeat(vb[:1], 8, 0))
        assert abs(loss - math.log(8)) < 1e-9

    def test_determinism(self, world):
        ds, _ = world
        cfg = replace(SMALL, content_epochs=2)
        a, _ = train_content_encoder(ds.items, cfg, seed=3)
        b, _ = train_content_encoder(ds.items, cfg, seed=3)
        c, _ = train_content_encoder(ds.items, cfg, seed=4)
        for k, v in a.params().items():
            assert np.array_equal(v, b.params()[k]), k
        assert any(not np.array_equal(v, c.params()[k]) for k, v in a.params().items())

    def test_batch_below_two_rejected(self, world):
        ds, _ = world
        with pytest.raises(ValueError, match="at least 2"):
            train_content_encoder(ds.items, replace(SMALL, content_batch=1), seed=0)

    def test_noise_free_views_recover_latent_order(self):
        # with no view noise the learned geometry should track the latent one
        wcfg = replace(
            SMALL_WORLD,
            users=40,
            source_items=200,
            target_items=50,
            view_noise_a=0.0,
            view_noise_b=0.0,
            ticks=1,
            source_events_per_user_tick=2,
            seed=11,
        )
        ds, latent = gen_world(wcfg)
        enc, _ = train_content_encoder(ds.items, replace(SMALL, content_epochs=300), seed=2)
        ids, va, vb = item_views(ds.items)
        ct = enc.embed(va, vb)
        rng = np.random.default_rng(3)
        pi = rng.integers(0, len(ids), 600)
        pj = rng.integers(0, len(ids), 600)
        keep = pi != pj
        pi, pj = pi[keep], pj[keep]
        learned = np.einsum("ij,ij->i", ct[pi], ct[pj])
        z = latent.z_items[ids]
        truth = np.einsum("ij,ij->i", z[pi], z[pj])
        ra = np.argsort(np.argsort(learned)).astype(float)
        rb = np.argsort(np.argsort(truth)).astype(float)
        rho = float(np.corrcoef(ra, rb)[0, 1])
        assert rho > 0.8


class TestSourceModel:
    def test_heldout_auc_beats_chance(self, source):
        model, _, _, test_ev, histories = source
        preds = predict_source(model, test_ev, histories, SMALL.source_history_cap)
        labels = np.array([e.label for e in test_ev])
        assert metrics.auc(labels, preds) > 0.6

    def test_untrained_auc_near_half(self, world, source):
        ds, _ = world
        _, _, train_ev, test_ev, histories = source
        cfg = replace(SMALL, source_epochs=0)
        model, curve = train_source_model(train_ev, ds.items, SMALL_WORLD.users, cfg, seed=4)
        assert curve == []
        preds = predict_source(model, test_ev, histories, cfg.source_history_cap)
        labels = np.array([e.label for e in test_ev])
        assert 0.42 < metrics.auc(labels, preds) < 0.58

    def test_loss_decreases(self, source):
        _, curve, _, _, _ = source
        assert curve[-1] < curve[0]

    def test_predictions_are_probabilities(self, source):
        model, _, _, test_ev, histories = source
        preds = predict_source(model, test_ev, histories, SMALL.source_history_cap)
        assert np.all((preds > 0.0) & (preds < 1.0))

    def test_qualifying_is_top_fraction_by_count(self, world, source):
        ds, _ = world
        model = source[0]
        source_items = [it for it in ds.items if it.domain == SOURCE]
        n = max(1, int(len(source_items) * SMALL.qualify_top_frac))
        ranked = sorted(source_items, key=lambda it: (-it.interaction_count, it.id))
        want = sorted(it.id for it in ranked[:n])
        assert list(model.qualifying_ids) == want


class TestSelectPair:
    def test_picks_max_above_threshold(self):
        got = select_pair(np.array([10, 11, 12]), np.array([0.1, 0.5, 0.4]), 0.4)
        assert got == (11, 0.5)

    def test_below_threshold_yields_none(self):
        assert select_pair(np.array([10, 11]), np.array([0.3, 0.2]), 0.4) is None

    def test_tie_goes_to_lowest_item_id(self):
        got = select_pair(np.array([12, 7]), np.array([0.4, 0.4]), 0.4)
        assert got == (7, 0.4)

    def test_threshold_is_inclusive(self):
        assert select_pair(np.array([5]), np.array([0.4]), 0.4) == (5, 0.4)

    def test_empty_history(self):
        assert select_pair(np.array([], dtype=np.int64), np.array([]), 0.4) is None


class TestDistill:
    def test_pairs_canonical_and_deduplicated(self, distilled):
        keys = [(p.target, p.best) for p in distilled.pairs]
        assert keys == sorted(keys)
        assert len(keys) == len(set(keys))
        assert all(0.4 <= p.score <= 1.0 for p in distilled.pairs)

    def test_pairs_reference_source_items(self, source, distilled):
        ids = set(int(i) for i in source[0].item_ids)
        assert all(p.target in ids and p.best in ids for p in distilled.pairs)

    def test_invariant_to_event_order(self, source, distilled):
        model, _, train_ev, _, histories = source
        again = distill_esu_pairs(
            model, list(reversed(train_ev)), histories, 0.4, SMALL, seed=5
        )
        assert again.pairs == distilled.pairs
        assert again.n_impressions == distilled.n_impressions
        assert again.mean_max_by_tick == distilled.mean_max_by_tick

    def test_raising_theta_filters_same_pairs(self, source, distilled):
        model, _, train_ev, _, histories = source
        strict = distill_esu_pairs(model, train_ev, histories, 0.5, SMALL, seed=5)
        want = [p for p in distilled.pairs if p.score >= 0.5]
        assert strict.pairs == want

    def test_attention_concentration_decays_over_ticks(self, distilled):
        by_tick = distilled.mean_max_by_tick
        assert by_tick[0] > by_tick[5]

    def test_history_floor_gates_pairs_not_the_curve(self, source):
        model, _, train_ev, _, histories = source
        loose = distill_esu_pairs(
            model, train_ev, histories, 0.4,
            replace(SMALL, distill_min_history=1), seed=5,
        )
        strict = distill_esu_pairs(
            model, train_ev, histories, 0.4,
            replace(SMALL, distill_min_history=30), seed=5,
        )
        loose_keys = {(p.target, p.best) for p in loose.pairs}
        strict_keys = {(p.target, p.best) for p in strict.pairs}
        assert strict_keys < loose_keys  # short-history pairs are gone
        assert strict.mean_max_by_tick == loose.mean_max_by_tick
        assert strict.n_impressions == loose.n_impressions

    def test_impression_cap(self, source, distilled):
        # n_impressions counts scored impressions: sampled ones with history
        model, _, train_ev, _, histories = source
        res = distill_esu_pairs(
            model, train_ev, histories, 0.4,
            replace(SMALL, distill_max_impressions=500), seed=5,
        )
        assert 400 <= res.n_impressions <= 500
        assert res.n_impressions < distilled.n_impressions

    def test_empty_history_produces_nothing(self, world, source):
        ds, _ = world
        model = source[0]
        first = [e for e in ds.events if e.domain == SOURCE][0]
        res = distill_esu_pairs(model, [first], {}, 0.4, SMALL, seed=0)
        assert res.pairs == [] and res.n_impressions == 0

    def test_round_trip(self, distilled, tmp_path):
        path = tmp_path / "pairs.jsonl"
        save_pairs(path, distilled.pairs)
        assert load_pairs(path) == distilled.pairs


class TestCoocPairs:
    def make_events(self, items, labels=None):
        from gist.data import InteractionEvent

        labels = labels or [1] * len(items)
        return [
            InteractionEvent(user=0, item=it, domain=SOURCE, timestamp=t, label=lb)
            for t, (it, lb) in enumerate(zip(items, labels))
        ]

    def test_window_counts(self):
        got = cooc_pairs(self.make_events([1, 2, 1, 3]), window=2, n_pairs=10)
        assert got == [EsuPair(1, 2, 1.0), EsuPair(1, 3, 0.5), EsuPair(2, 3, 0.5)]

    def test_truncation(self):
        got = cooc_pairs(self.make_events([1, 2, 1, 3]), window=2, n_pairs=2)
        assert [(p.target, p.best) for p in got] == [(1, 2), (1, 3)]

    def test_only_clicked_items_count(self):
        events = self.make_events([1, 9, 2], labels=[1, 0, 1])
        got = cooc_pairs(events, window=2, n_pairs=10)
        assert got == [EsuPair(1, 2, 1.0)]

    def test_no_clicks_gives_nothing(self):
        assert cooc_pairs(self.make_events([1, 2], labels=[0, 0]), 2, 5) == []


class TestBehaviorEncoder:
    def test_aligns_to_id_embeddings(self, world, source, behavior):
        ds, _ = world
        model = source[0]
        enc, curve = behavior
        assert curve[-1] < curve[0]
        by_id = {it.id: it for it in ds.items}
        qualifying = [by_id[int(i)] for i in model.qualifying_ids]
        _, va, vb = item_views(qualifying)
        bh = enc.embed(va, vb)
        idv = nn.l2_normalize_rows(model.id_embeddings([it.id for it in qualifying]))
        aligned = float(np.einsum("ij,ij->i", bh, idv).mean())
        mismatched = float(np.einsum("ij,ij->i", bh, np.roll(idv, 1, axis=0)).mean())
        assert aligned - mismatched >= 0.2

    def test_requires_qualifying_items(self, world, source):
        ds, _ = world
        model = replace(source[0], qualifying_ids=np.array([], dtype=np.int64))
        with pytest.raises(ValueError, match="qualifying"):
            train_behavior_encoder(ds.items, model, SMALL, seed=0)


class TestFuse:
    def make_union(self, d_e=6, seed=0, mode="full"):
        return UnionModel.create(d_e, np.random.default_rng(seed), mode=mode)

    def zero_gates(self, union):
        for gate in (union.gate_ct, union.gate_bh):
            for w in gate.weights:
                w[:] = 0.0
            for b in gate.biases:
                b[:] = 0.0

    def test_zero_gate_is_exact_identity(self):
        union = self.make_union()
        self.zero_gates(union)
        rng = np.random.default_rng(1)
        ct = nn.l2_normalize_rows(rng.normal(size=(5, 6)))
        bh = nn.l2_normalize_rows(rng.normal(size=(5, 6)))
        chat, bhat = gate_vectors(union, ct, bh)
        assert np.array_equal(chat, ct)
        assert np.array_equal(bhat, bh)

    def test_saturated_negative_gate_shrinks_by_two_sigma(self):
        union = self.make_union()
        self.zero_gates(union)
        union.gate_ct.biases[0][:] = -10.0
        rng = np.random.default_rng(2)
        ct = nn.l2_normalize_rows(rng.normal(size=(4, 6)))
        bh = nn.l2_normalize_rows(rng.normal(size=(4, 6)))
        chat, _ = gate_vectors(union, ct, bh)
        ratio = np.linalg.norm(chat, axis=1) / np.linalg.norm(ct, axis=1)
        np.testing.assert_allclose(ratio, 9.08e-5, atol=5e-8)

    def test_no_gate_mode_passes_through(self):
        union = self.make_union(mode="no_gate")
        ct, bh = np.eye(3), np.eye(3)[::-1].copy()
        chat, bhat = gate_vectors(union, ct, bh)
        assert chat is ct and bhat is bh

    def test_fused_rows_are_unit(self):
        union = self.make_union()
        rng = np.random.default_rng(3)
        out = fuse(
            union,
            nn.l2_normalize_rows(rng.normal(size=(7, 6))),
            nn.l2_normalize_rows(rng.normal(size=(7, 6))),
        )
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)

    def test_zero_content_row_falls_back_to_cross_bias(self):
        union = self.make_union(d_e=4, seed=5)
        rng = np.random.default_rng(6)
        union.cross.biases[0][:] = rng.normal(size=4)
        ct = np.zeros((1, 4))
        bh = nn.l2_normalize_rows(rng.normal(size=(1, 4)))
        out = fuse(union, ct, bh)
        np.testing.assert_allclose(out[0], nn.l2_normalize(union.cross.biases[0]), atol=1e-12)

    def test_concat_mode_shape(self):
        union = self.make_union(d_e=4, mode="concat")
        rng = np.random.default_rng(7)
        out = fuse(
            union,
            nn.l2_normalize_rows(rng.normal(size=(3, 4))),
            nn.l2_normalize_rows(rng.normal(size=(3, 4))),
        )
        assert out.shape == (3, 4)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="unknown union mode"):
            UnionModel.create(4, np.random.default_rng(0), mode="fancy")


class TestUnionTraining:
    def test_loss_decreases(self, union_setup):
        curve = union_setup[4]
        assert curve[-1] < curve[0]

    def test_training_pulls_pairs_together(self, union_setup, distilled):
        ids, ct, bh, union, _, union0 = union_setup
        usable = [(p.target, p.best) for p in distilled.pairs if p.target != p.best]
        joint = fuse(union, ct, bh)
        joint0 = fuse(union0, ct, bh)
        trained = metrics.recall_at_k(ids, joint, usable, 10)
        untrained = metrics.recall_at_k(ids, joint0, usable, 10)
        assert trained > untrained

    def test_determinism(self, union_setup, distilled):
        ids, ct, bh = union_setup[:3]
        cfg = replace(SMALL, union_epochs=3)
        a, _ = train_union_model(distilled.pairs, ids, ct, bh, cfg, seed=9)
        b, _ = train_union_model(distilled.pairs, ids, ct, bh, cfg, seed=9)
        for k, v in a.params().items():
            assert np.array_equal(v, b.params()[k]), k

    def test_decay_rates_split_by_group(self, union_setup, distilled):
        # single epoch, single batch: identical Adam step, so decay shows up
        # as a pure scale factor per parameter group; log_tau is never decayed
        ids, ct, bh = union_setup[:3]
        one = replace(SMALL, union_epochs=1, union_batch=1 << 20)
        base, _ = train_union_model(distilled.pairs, ids, ct, bh, one, seed=9)
        cfg = replace(one, union_weight_decay=2.0, union_gate_decay=5.0)
        dec, _ = train_union_model(distilled.pairs, ids, ct, bh, cfg, seed=9)
        for name, b in base.params().items():
            d = dec.params()[name]
            if name == "union.log_tau":
                assert np.array_equal(d, b)
            elif ".gate_" in name:
                np.testing.assert_allclose(
                    d, b * (1.0 - one.union_lr * 5.0), rtol=1e-12, err_msg=name
                )
            else:
                np.testing.assert_allclose(
                    d, b * (1.0 - one.union_lr * 2.0), rtol=1e-12, err_msg=name
                )

    def test_needs_two_distinct_pairs(self, union_setup):
        ids, ct, bh = union_setup[:3]
        pairs = [EsuPair(int(ids[0]), int(ids[1]), 0.5)] * 3
        with pytest.raises(ValueError, match="2 distinct"):
            train_union_model(pairs, ids, ct, bh, SMALL, seed=0)

    def test_self_pairs_do_not_count(self, union_setup):
        ids, ct, bh = union_setup[:3]
        pairs = [
            EsuPair(int(ids[0]), int(ids[0]), 0.9),
            EsuPair(int(ids[1]), int(ids[1]), 0.8),
            EsuPair(int(ids[2]), int(ids[2]), 0.7),
        ]
        with pytest.raises(ValueError, match="2 distinct"):
            train_union_model(pairs, ids, ct, bh, SMALL, seed=0)

    def test_item_reps_shapes(self, world, union_setup):
        ds, _ = world
        ids, ct, bh, union = union_setup[:4]
        assert len(ids) == len(ds.items)
        for mat in (ct, bh, fuse(union, ct, bh)):
            assert mat.shape == (len(ids), SMALL.d_e)
            np.testing.assert_allclose(np.linalg.norm(mat, axis=1), 1.0, atol=1e-12)


class TestGradients:
    """Seeds are chosen so no ReLU kink or dead row sits within epsilon of a
    finite-difference probe; failures at other seeds would measure float noise
    against a tiny denominator, not a wrong derivative."""

    BOUND = 1e-4

    def test_contrastive_step(self):
        rng = np.random.default_rng(9)
        enc = TwoTowerEncoder.create("content", 4, 5, 3, rng)
        va = rng.normal(size=(6, 4))
        vb = rng.normal(size=(6, 4))
        err = nn.grad_check(lambda: contrastive_step(enc, va, vb), enc.params())
        assert err < self.BOUND

    def test_alignment_step(self):
        rng = np.random.default_rng(6)
        enc = TwoTowerEncoder.create("behavior", 4, 5, 3, rng)
        va = rng.normal(size=(6, 4))
        vb = rng.normal(size=(6, 4))
        tgt = rng.normal(size=(6, 3))
        err = nn.grad_check(lambda: alignment_step(enc, va, vb, tgt), enc.params())
        assert err < self.BOUND

    @pytest.mark.parametrize("mode,seed", [("full", 11), ("no_gate", 2), ("concat", 9)])
    def test_union_step(self, mode, seed):
        rng = np.random.default_rng(seed)
        union = UnionModel.create(4, rng, mode=mode)
        ct_t = nn.l2_normalize_rows(rng.normal(size=(6, 4)))
        bh_t = nn.l2_normalize_rows(rng.normal(size=(6, 4)))
        ct_b = nn.l2_normalize_rows(rng.normal(size=(6, 4)))
        bh_b = nn.l2_normalize_rows(rng.normal(size=(6, 4)))
        err = nn.grad_check(
            lambda: cbjt.union_step(union, ct_t, bh_t, ct_b, bh_b), union.params()
        )
        assert err < self.BOUND

    def test_source_step(self):
        rng = np.random.default_rng(11)
        d_e, n_items, n_users, b, r = 4, 10, 5, 6, 5
        ids = np.arange(n_items, dtype=np.int64)
        model = SourceModel(
            item_emb=rng.normal(0.0, 0.4, size=(n_items, d_e)),
            user_emb=rng.normal(0.0, 0.4, size=(n_users, d_e)),
            att=Mlp.create([4 * d_e, 6, 1], rng),
            top=Mlp.create([3 * d_e, 8, 1], rng),
            item_ids=ids,
            row_of=row_map(ids),
            qualifying_ids=ids[:2],
        )
        hist = rng.integers(0, n_items, size=(b, r))
        lens = np.array([1, 2, 3, 4, 5, 3])
        mask = np.arange(r)[None, :] < lens[:, None]
        blk = cbjt._Block(
            user=rng.integers(0, n_users, size=b),
            item=rng.integers(0, n_items, size=b),
            hist=np.where(mask, hist, -1),
            mask=mask,
            label=rng.integers(0, 2, size=b).astype(float),
            tick=np.zeros(b, dtype=np.int64),
        )
        err = nn.grad_check(
            lambda: cbjt._source_step(model, blk, np.arange(b)), model.params()
        )
        assert err < self.BOUND
