import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gist import ctr, nn
from gist.config import CtrConfig
from gist.ctr import (
    asi_bin,
    asi_histogram,
    build_inputs,
    build_samples,
    count_bucket,
    create_ctr_model,
    load_preds,
    predict_ctr,
    train_ctr,
    write_preds,
)
from gist.data import (
    TARGET,
    InteractionEvent,
    SearchLogRecord,
    SearchResult,
    TrainingSample,
    UserRecord,
    clicked_history,
)


class TestAsiBin:
    def test_edges(self):
        assert asi_bin(-1.0, 4) == 0
        assert asi_bin(0.0, 4) == 2
        assert asi_bin(1.0, 4) == 3

    def test_clamps_out_of_range(self):
        assert asi_bin(1.0 + 1e-9, 4) == 3
        assert asi_bin(-1.5, 4) == 0

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        scores = rng.uniform(-1, 1, size=50)
        batch = asi_bin(scores, 32)
        assert list(batch) == [int(asi_bin(s, 32)) for s in scores]

    @given(st.lists(st.floats(-1, 1), min_size=2, max_size=20), st.integers(2, 64))
    @settings(max_examples=80, deadline=None)
    def test_monotone(self, scores, m1):
        bins = asi_bin(np.sort(np.array(scores)), m1)
        assert np.all(np.diff(bins) >= 0)
        assert np.all((bins >= 0) & (bins < m1))


class TestAsiHistogram:
    def test_hand_case(self):
        assert list(asi_histogram([0.9, 0.1, -0.2], 4)) == [0, 1, 1, 1]

    def test_empty(self):
        assert list(asi_histogram([], 4)) == [0, 0, 0, 0]

    def test_repeats(self):
        assert list(asi_histogram([0.6, 0.6, 0.6], 4)) == [0, 0, 0, 3]

    @given(st.lists(st.floats(-1, 1), max_size=30), st.integers(2, 16))
    @settings(max_examples=80, deadline=None)
    def test_is_multiset_image_of_bin(self, scores, m2):
        hist = asi_histogram(scores, m2)
        assert hist.sum() == len(scores)
        want = np.zeros(m2, dtype=np.int64)
        for s in scores:
            want[int(asi_bin(s, m2))] += 1
        assert np.array_equal(hist, want)


class TestCountBucket:
    def test_log_scale_edges(self):
        counts = [0, 1, 2, 3, 4, 7, 8, 100]
        assert list(count_bucket(counts, 8)) == [0, 1, 2, 2, 3, 3, 4, 7]

    def test_cap(self):
        assert count_bucket([10**6], 8)[0] == 7


CFG = CtrConfig(
    item_dim=6,
    user_dim=5,
    profile_dim=3,
    asi_dim=4,
    hist_dim=5,
    att_hidden=7,
    top_hidden=[8],
    m1=8,
    m2=4,
    hist_buckets=3,
    epochs=40,
    batch=4,
    lr=1e-2,
    target_history_cap=10,
)
VOCAB = [3, 2]
TGT_IDS = [100, 101, 102, 103, 104]
SRC_IDS = list(range(10))
USERS = {i: UserRecord(id=i, profile_features=[i % 3, i % 2]) for i in range(6)}


def toy_samples(seed=0, n=24):
    # labels depend on the target item so the toy task is learnable
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        tgt = int(rng.choice(TGT_IDS))
        n_h = int(rng.integers(0, 5))
        n_k = int(rng.integers(0, 6))
        hits, seen = [], set()
        for _ in range(n_k):
            item = int(rng.choice(SRC_IDS))
            if item not in seen:
                seen.add(item)
                hits.append((item, float(rng.uniform(-1, 1))))
        samples.append(
            TrainingSample(
                user=int(rng.integers(6)),
                target_item=tgt,
                target_history=[int(rng.choice(TGT_IDS)) for _ in range(n_h)],
                search_result=SearchResult(target=tgt, hits=hits),
                label=int(tgt in (100, 101)),
                timestamp=i,
            )
        )
    return samples


def make_model(variant, asi="off", seed=0):
    return create_ctr_model(CFG, 6, VOCAB, TGT_IDS, SRC_IDS, seed, variant=variant, asi=asi)


class TestModelCreation:
    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="unknown variant"):
            make_model("deep_everything")

    def test_unknown_asi_mode(self):
        with pytest.raises(ValueError, match="unknown asi"):
            make_model("gist", asi="fancy")

    def test_param_sets_by_variant(self):
        din = make_model("din").params()
        assert "ctr.att_s.w0" not in din and "ctr.asi" not in din
        pool = make_model("sim_soft_pool").params()
        assert "ctr.att_s.w0" not in pool
        attn = make_model("sim_soft_attn").params()
        assert "ctr.att_s.w0" in attn and "ctr.asi" not in attn
        gist = make_model("gist", "score+dist").params()
        assert "ctr.asi" in gist and "ctr.hist" in gist

    def test_gist_off_matches_attn_wiring(self):
        a = make_model("gist", "off")
        b = make_model("sim_soft_attn")
        assert a.att_s.weights[0].shape == b.att_s.weights[0].shape
        assert a.top.weights[0].shape == b.top.weights[0].shape


class TestForward:
    @pytest.mark.parametrize("variant,asi", [
        ("din", "off"),
        ("sim_hard", "off"),
        ("sim_soft_pool", "off"),
        ("sim_soft_attn", "off"),
        ("gist", "score"),
        ("gist", "score+dist"),
    ])
    def test_outputs_are_probabilities(self, variant, asi):
        samples = toy_samples()
        for seed in range(40):
            model = make_model(variant, asi, seed=seed)
            inp = build_inputs(model, samples, USERS)
            preds = predict_ctr(model, inp)
            assert np.all((preds > 0) & (preds < 1))
            assert np.all(np.isfinite(preds))

    def test_history_and_hit_permutation_invariance(self):
        model = make_model("gist", "score+dist", seed=3)
        base = next(
            s for s in toy_samples(seed=5)
            if len(s.target_history) >= 2 and len(s.search_result.hits) >= 2
        )
        perm = TrainingSample(
            user=base.user,
            target_item=base.target_item,
            target_history=list(reversed(base.target_history)),
            search_result=SearchResult(
                target=base.search_result.target,
                hits=list(reversed(base.search_result.hits)),
            ),
            label=base.label,
            timestamp=base.timestamp,
        )
        a = predict_ctr(model, build_inputs(model, [base], USERS))
        b = predict_ctr(model, build_inputs(model, [perm], USERS))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_empty_hits_ignore_source_side_tables(self):
        model = make_model("gist", "score+dist", seed=4)
        sample = TrainingSample(
            user=1, target_item=100, target_history=[101, 102],
            search_result=SearchResult(target=100, hits=[]), label=1, timestamp=0,
        )
        inp = build_inputs(model, [sample], USERS)
        before = predict_ctr(model, inp)
        model.src_emb[:] = 9.99
        model.asi_emb[:] = -7.5
        after = predict_ctr(model, inp)
        np.testing.assert_array_equal(before, after)

    def test_empty_hits_still_use_zero_histogram_embedding(self):
        model = make_model("gist", "score+dist", seed=4)
        sample = TrainingSample(
            user=1, target_item=100, target_history=[101],
            search_result=SearchResult(target=100, hits=[]), label=1, timestamp=0,
        )
        inp = build_inputs(model, [sample], USERS)
        before = predict_ctr(model, inp)
        model.hist_emb[:] += 1.0
        after = predict_ctr(model, inp)
        assert not np.array_equal(before, after)

    def test_gist_with_zeroed_asi_equals_attention_variant(self):
        # zero side-info and histogram tables, then surgically share weights
        gist = make_model("gist", "score+dist", seed=6)
        gist.asi_emb[:] = 0.0
        gist.hist_emb[:] = 0.0
        attn = make_model("sim_soft_attn", seed=7)
        d = CFG.item_dim
        attn.user_emb[:] = gist.user_emb
        for f in range(len(VOCAB)):
            attn.prof_embs[f][:] = gist.prof_embs[f]
        attn.tgt_emb[:] = gist.tgt_emb
        attn.src_emb[:] = gist.src_emb
        for i in range(len(attn.att_b.weights)):
            attn.att_b.weights[i][:] = gist.att_b.weights[i]
            attn.att_b.biases[i][:] = gist.att_b.biases[i]
        attn.att_s.weights[0][:] = gist.att_s.weights[0][: 4 * d]
        attn.att_s.biases[0][:] = gist.att_s.biases[0]
        for i in range(1, len(attn.att_s.weights)):
            attn.att_s.weights[i][:] = gist.att_s.weights[i]
            attn.att_s.biases[i][:] = gist.att_s.biases[i]
        base = CFG.user_dim + sum(CFG.profile_dim for _ in VOCAB) + 2 * d
        keep = list(range(base + d))  # shared blocks, minus side + histogram
        attn.top.weights[0][:] = gist.top.weights[0][keep]
        attn.top.biases[0][:] = gist.top.biases[0]
        for i in range(1, len(attn.top.weights)):
            attn.top.weights[i][:] = gist.top.weights[i]
            attn.top.biases[i][:] = gist.top.biases[i]
        samples = toy_samples(seed=8)
        a = predict_ctr(gist, build_inputs(gist, samples, USERS))
        b = predict_ctr(attn, build_inputs(attn, samples, USERS))
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)

    def test_source_table_gradient_nonzero_for_gist(self):
        model = make_model("gist", "score+dist", seed=9)
        samples = [s for s in toy_samples(seed=9) if s.search_result.hits]
        inp = build_inputs(model, samples, USERS)
        _, grads = ctr._step(model, inp, np.arange(len(samples)))
        assert np.abs(grads["ctr.src_item"]).sum() > 0


class TestBuildSamples:
    def make_events(self):
        return [
            InteractionEvent(user=0, item=100, domain=TARGET, timestamp=10, label=1),
            InteractionEvent(user=1, item=101, domain=TARGET, timestamp=5, label=0),
        ]

    def test_join_and_canonical_order(self):
        events = self.make_events()
        log = [
            SearchLogRecord(user=0, target=100, timestamp=10,
                            result=SearchResult(target=100, hits=[(3, 0.5)])),
            SearchLogRecord(user=1, target=101, timestamp=5,
                            result=SearchResult(target=101, hits=[])),
        ]
        histories = clicked_history(events, TARGET)
        samples = build_samples(events, histories, log, cap=10)
        assert [s.timestamp for s in samples] == [5, 10]
        assert samples[1].search_result.hits == [(3, 0.5)]

    def test_missing_log_record_is_an_error(self):
        events = self.make_events()
        log = [
            SearchLogRecord(user=0, target=100, timestamp=10,
                            result=SearchResult(target=100, hits=[])),
        ]
        with pytest.raises(KeyError, match="missing from search log"):
            build_samples(events, clicked_history(events, TARGET), log, cap=10)

    def test_no_log_means_no_search_result(self):
        events = self.make_events()
        samples = build_samples(events, clicked_history(events, TARGET), None, cap=10)
        assert all(s.search_result is None for s in samples)

    def test_history_is_prior_clicks_only(self):
        events = [
            InteractionEvent(user=0, item=100, domain=TARGET, timestamp=1, label=1),
            InteractionEvent(user=0, item=101, domain=TARGET, timestamp=2, label=0),
            InteractionEvent(user=0, item=102, domain=TARGET, timestamp=3, label=1),
        ]
        samples = build_samples(events, clicked_history(events, TARGET), None, cap=10)
        assert samples[2].target_history == [100]


class TestTraining:
    def test_loss_decreases_and_beats_base_rate(self):
        samples = toy_samples(seed=1, n=48)
        model = make_model("gist", "score+dist", seed=1)
        inp = build_inputs(model, samples, USERS)
        curve = train_ctr(model, inp, CFG, seed=2)
        assert curve[-1] < curve[0]
        rate = np.mean([s.label for s in samples])
        base_entropy = -(rate * math.log(rate) + (1 - rate) * math.log(1 - rate))
        assert curve[-1] <= base_entropy

    def test_single_class_labels_warn_but_train(self):
        samples = toy_samples(seed=2, n=8)
        forced = [
            TrainingSample(s.user, s.target_item, s.target_history,
                           s.search_result, 1, s.timestamp)
            for s in samples
        ]
        model = make_model("din", seed=2)
        inp = build_inputs(model, forced, USERS)
        with pytest.warns(UserWarning, match="single-class"):
            curve = train_ctr(model, inp, CFG, seed=0)
        assert len(curve) == CFG.epochs

    def test_deterministic_per_seed(self):
        samples = toy_samples(seed=3, n=16)
        curves = []
        for _ in range(2):
            model = make_model("sim_soft_attn", seed=5)
            inp = build_inputs(model, samples, USERS)
            curves.append(train_ctr(model, inp, CFG, seed=7))
        assert curves[0] == curves[1]

    def test_empty_samples_rejected(self):
        model = make_model("din", seed=0)
        inp = build_inputs(model, [], USERS)
        with pytest.raises(ValueError, match="no training samples"):
            train_ctr(model, inp, CFG, seed=0)

    def test_weight_decay_is_decoupled_and_spares_biases(self):
        # one epoch, one batch: the Adam step is identical across runs, so
        # the decayed run must equal the base run scaled by (1 - lr*wd) on
        # weights and exactly the base run on biases
        samples = toy_samples(seed=4, n=8)
        one = replace(CFG, epochs=1, batch=8)
        out = {}
        for wd in (0.0, 5.0):
            model = make_model("gist", "score+dist", seed=3)
            inp = build_inputs(model, samples, USERS)
            train_ctr(model, inp, replace(one, weight_decay=wd), seed=9)
            out[wd] = {k: v.copy() for k, v in model.params().items()}
        shrink = 1.0 - one.lr * 5.0

        def is_bias(name):
            leaf = name.rpartition(".")[2]
            return leaf.startswith("b") and leaf[1:].isdigit()

        saw_bias = saw_att_b_weight = False
        for name, base in out[0.0].items():
            if is_bias(name):
                assert np.array_equal(out[5.0][name], base), name
                saw_bias = True
            else:
                np.testing.assert_allclose(
                    out[5.0][name], base * shrink, rtol=1e-12, err_msg=name
                )
                saw_att_b_weight |= ".att_b." in name
        # the target-attention MLP is named att_b; a sloppy substring match
        # on ".b" would wrongly exempt its weight matrices
        assert saw_bias and saw_att_b_weight


class TestGradients:
    """Seeds chosen as in the other suites: away from ReLU kinks and from
    all-positions-active attention units whose true gradient is exactly zero."""

    BOUND = 1e-4

    @pytest.mark.parametrize("variant,asi,seed", [
        ("gist", "score+dist", 4),
        ("gist", "score", 8),
        ("sim_soft_attn", "off", 9),
        ("sim_soft_pool", "off", 6),
        ("sim_hard", "off", 9),
        ("din", "off", 9),
    ])
    def test_full_loss(self, variant, asi, seed):
        rng = np.random.default_rng(seed)
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
        src_ids = list(range(10))
        samples = []
        for i in range(6):
            n_h = int(rng.integers(0, 5))
            n_k = int(rng.integers(1, 6)) if i != 3 else 0
            hits, seen = [], set()
            for _ in range(n_k):
                item = int(rng.choice(src_ids))
                if item not in seen:
                    seen.add(item)
                    hits.append((item, float(rng.uniform(-1, 1))))
            samples.append(
                TrainingSample(
                    user=int(rng.integers(5)),
                    target_item=int(rng.choice(tgt_ids)),
                    target_history=[int(rng.choice(tgt_ids)) for _ in range(n_h)],
                    search_result=SearchResult(target=0, hits=hits),
                    label=int(rng.integers(2)),
                    timestamp=i,
                )
            )
        model = create_ctr_model(cfg, 5, [3, 2], tgt_ids, src_ids, seed,
                                 variant=variant, asi=asi)
        inp = build_inputs(model, samples, users)
        err = nn.grad_check(
            lambda: ctr._step(model, inp, np.arange(len(samples))), model.params()
        )
        assert err < self.BOUND


class TestPredsFile:
    def test_round_trip_and_format(self, tmp_path):
        path = tmp_path / "preds.csv"
        labels = [1, 0, 1]
        scores = [0.123456789123, 0.5, 1.0 / 3.0]
        write_preds(path, labels, scores)
        lines = path.read_text().splitlines()
        assert lines[0] == "sample_id,label,score"
        assert lines[1] == "0,1,0.123456789"
        assert lines[3] == "2,1,0.333333333"
        ids, got_labels, got_scores = load_preds(path)
        assert list(ids) == [0, 1, 2]
        assert list(got_labels) == labels
        np.testing.assert_allclose(got_scores, scores, atol=5e-10)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("id,y,p\n0,1,0.5\n")
        with pytest.raises(ValueError, match="unexpected preds header"):
            load_preds(path)
