import numpy as np
import pytest

from streamvq.core import DegenerateDistributionError, SeededRng, TokenGrid, special_ids
from streamvq.delay import apply_delay
from streamvq.lmsim import (
    MarkovModel,
    NonPositiveTemperature,
    NoProgressError,
    SamplingConfig,
    apply_repetition_penalty,
    apply_temperature,
    generate,
    markov_fit,
    sample,
    softmax,
    top_k_filter,
    top_p_filter,
)


class TestTemperature:
    def test_identity(self):
        z = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(apply_temperature(z, 1.0), z)

    def test_uniform_preserved(self):
        z = np.full(4, 3.0)
        out = apply_temperature(z, 0.5)
        assert np.all(out == out[0])

    def test_arithmetic(self):
        assert np.array_equal(apply_temperature(np.array([2.0, 0.0]), 0.5), [4.0, 0.0])

    def test_nonpositive_rejected(self):
        with pytest.raises(NonPositiveTemperature):
            apply_temperature(np.zeros(2), 0.0)


class TestRepetitionPenalty:
    def test_identity_at_one(self):
        z = np.array([4.0, -1.0])
        assert np.array_equal(apply_repetition_penalty(z, [0, 1], 1.0), z)

    def test_positive_branch(self):
        out = apply_repetition_penalty(np.array([4.0, 1.0]), [0], 2.0)
        assert out[0] == 2.0 and out[1] == 1.0

    def test_negative_branch(self):
        out = apply_repetition_penalty(np.array([-1.0, 1.0]), [0], 2.0)
        assert out[0] == -2.0 and out[1] == 1.0


class TestTopK:
    def test_identity_when_k_large(self):
        p = np.array([0.5, 0.3, 0.2])
        assert np.array_equal(top_k_filter(p, 3), p)
        assert np.array_equal(top_k_filter(p, 10), p)

    def test_hand_example(self):
        out = top_k_filter(np.array([0.5, 0.3, 0.2]), 2)
        assert np.allclose(out, [0.625, 0.375, 0.0])

    def test_property_support_and_mass(self):
        gen = np.random.default_rng(0)
        for _ in range(200):
            p = gen.random(100)
            p /= p.sum()
            out = top_k_filter(p, 10)
            assert np.count_nonzero(out) <= 10
            assert out.sum() == pytest.approx(1.0, abs=1e-9)


class TestTopP:
    def test_identity_at_one(self):
        p = np.array([0.5, 0.3, 0.2])
        assert np.allclose(top_p_filter(p, 1.0), p)

    def test_prefix_example(self):
        out = top_p_filter(np.array([0.6, 0.3, 0.1]), 0.8)
        assert np.allclose(out, [2 / 3, 1 / 3, 0.0])

    def test_single_entry_suffices(self):
        out = top_p_filter(np.array([0.6, 0.3, 0.1]), 0.6)
        assert np.allclose(out, [1.0, 0.0, 0.0])

    def test_minimality_property(self):
        gen = np.random.default_rng(1)
        for _ in range(200):
            p = gen.random(50)
            p /= p.sum()
            out = top_p_filter(p, 0.8)
            kept = out > 0
            retained = p[kept].sum()
            assert retained >= 0.8 - 1e-9
            # dropping the smallest retained entry must fall below p
            assert retained - p[kept].min() < 0.8


class TestSample:
    def test_one_hot(self):
        p = np.zeros(5)
        p[3] = 1.0
        for seed in range(10):
            assert sample(p, SeededRng(seed)) == 3

    def test_deterministic(self):
        p = np.array([0.25, 0.25, 0.5])
        a = [sample(p, rng) for rng in [SeededRng(7)] for _ in range(20)]
        b = [sample(p, rng) for rng in [SeededRng(7)] for _ in range(20)]
        assert a == b

    def test_binomial_three_sigma(self):
        rng = SeededRng(42)
        p = np.array([0.7, 0.3])
        draws = sum(sample(p, rng) for _ in range(100_000))
        sigma = np.sqrt(100_000 * 0.3 * 0.7)
        assert abs(draws - 30_000) <= 3 * sigma

    def test_degenerate(self):
        with pytest.raises(DegenerateDistributionError):
            sample(np.zeros(3), SeededRng(0))


def cyclic_grid(period, frames, m, vocab):
    ids = np.array(
        [[(t + 3 * j) % period for j in range(m)] for t in range(frames)]
    )
    return TokenGrid(ids % vocab, vocab)


class TestMarkovFit:
    def test_one_hot_on_cycle(self):
        g = cyclic_grid(5, 30, 2, 5)
        dg = apply_delay(g, 1)
        model = markov_fit([dg], 1)
        # context = first delayed frame; next stream-1 token is deterministic
        history = np.vstack([np.full((1, 2), model.bos_id), dg.ids[:1]])
        scores = model.scores(history, (), 1)
        assert np.argmax(scores) == dg.ids[1, 0]
        assert np.isneginf(np.delete(scores, dg.ids[1, 0])).all()

    def test_order_zero_unigram(self):
        g = TokenGrid(np.array([[0], [0], [0], [1]]), 2)
        dg = apply_delay(g, 0)
        model = markov_fit([dg], 0)
        scores = model.scores(np.full((1, 1), model.bos_id), (), 1)
        p = np.exp(scores)
        assert p[0] == pytest.approx(3 / 5)  # 3 zeros, 1 one, 1 EOS
        assert p[1] == pytest.approx(1 / 5)

    def test_order_one_alternating_transitions(self):
        g = TokenGrid(np.array([[t % 2] for t in range(20)]), 2)
        dg = apply_delay(g, 0)
        model = markov_fit([dg], 1)
        s0 = np.exp(model.scores(np.array([[0]]), (), 1))
        s1 = np.exp(model.scores(np.array([[1]]), (), 1))
        assert s0[1] == pytest.approx(1.0)
        # 9 transitions 1->0 plus the single EOS after the final 1
        assert s1[0] == pytest.approx(0.9)
        assert s1[model.eos_id] == pytest.approx(0.1)

    def test_inconsistent_corpus(self):
        from streamvq.core import InconsistentCorpusError

        a = apply_delay(TokenGrid(np.zeros((3, 2), dtype=int), 4), 1)
        b = apply_delay(TokenGrid(np.zeros((3, 2), dtype=int), 4), 2)
        with pytest.raises(InconsistentCorpusError):
            markov_fit([a, b], 1)

    def test_json_round_trip(self):
        g = cyclic_grid(5, 20, 3, 5)
        model = markov_fit([apply_delay(g, 1)], 1, smoothing=0.5)
        clone = MarkovModel.from_json(model.to_json())
        assert clone.to_json() == model.to_json()
        history = np.full((1, 3), model.bos_id)
        assert np.allclose(model.scores(history, (), 1), clone.scores(history, (), 1))


GREEDY = dict(temperature=1e-6, top_k=1, top_p=1.0, repetition_penalty=1.0)


class TestGenerate:
    def test_regenerates_cycle(self):
        g = cyclic_grid(6, 36, 4, 7)
        dg = apply_delay(g, 1)
        model = markov_fit([dg], 1)
        cfg = SamplingConfig(seed=0, **GREEDY)
        dgen, tgen, reason = generate(model, cfg, 4, 1, 24, 7)
        assert np.array_equal(tgen.ids, g.ids[:24])

    def test_single_stream_degenerate(self):
        g = TokenGrid(np.array([[t % 3] for t in range(30)]), 3)
        model = markov_fit([apply_delay(g, 0)], 1)
        cfg = SamplingConfig(seed=0, **GREEDY)
        _, tgen, _ = generate(model, cfg, 1, 2, 12, 3)
        assert np.array_equal(tgen.ids, g.ids[:12])

    def test_deterministic_given_seed(self):
        g = cyclic_grid(5, 40, 3, 6)
        model = markov_fit([apply_delay(g, 1)], 1, smoothing=0.1)
        cfg = SamplingConfig(seed=11)
        a = generate(model, cfg, 3, 1, 15, 6)
        b = generate(model, cfg, 3, 1, 15, 6)
        assert a[1] == b[1] and a[0] == b[0]

    def test_no_specials_in_token_grid(self):
        g = cyclic_grid(4, 30, 3, 5)
        model = markov_fit([apply_delay(g, 2)], 1, smoothing=0.2)
        _, tgen, _ = generate(model, SamplingConfig(seed=5), 3, 2, 18, 5)
        assert tgen.ids.max() < 5

    def test_eos_stopping(self):
        g = TokenGrid(np.array([[0], [1], [2]]), 4)
        model = markov_fit([apply_delay(g, 0)], 2)
        cfg = SamplingConfig(seed=0, **GREEDY)
        _, tgen, reason = generate(model, cfg, 1, 0, 50, 4)
        assert reason == "eos"
        assert np.array_equal(tgen.ids, g.ids)

    def test_no_progress_returns_empty(self):
        class EosModel:
            def scores(self, history, partial, j):
                z = np.full(4 + 3, -np.inf)
                z[4 + 2] = 0.0  # EOS
                return z

        cfg = SamplingConfig(seed=0, **GREEDY)
        dg, tg, reason = generate(EosModel(), cfg, 2, 1, 10, 4)
        assert reason == "no_progress" and tg.frames == 0
        with pytest.raises(NoProgressError):
            generate(EosModel(), cfg, 2, 1, 10, 4, strict=True)

    def test_chain_rule_contexts_via_spy(self):
        seen = []

        class SpyModel:
            def scores(self, history, partial, j):
                seen.append((history.shape[0], tuple(partial), j))
                z = np.full(5 + 3, -np.inf)
                z[j - 1] = 0.0  # emit token j-1 on stream j
                return z

        cfg = SamplingConfig(seed=0, **GREEDY)
        m, d = 3, 1
        generate(SpyModel(), cfg, m, d, 4, 5)
        # frame 1: only stream 1 is real (d=1); frame 3: streams 1..3
        frame3 = [rec for rec in seen if rec[0] == 3 + 1]  # BOS + 3 frames
        js = [j for _, _, j in frame3]
        assert js == sorted(js)
        # within a frame the partial grows with already-emitted low streams
        for _, partial, j in seen:
            assert len(partial) == j - 1
            assert all(partial[i] == i or partial[i] >= 5 for i in range(j - 1))

    def test_pad_positions_forced_without_query(self):
        queried = []

        class SpyModel:
            def scores(self, history, partial, j):
                queried.append((history.shape[0] - 1, j))  # 0-indexed frame
                z = np.full(5 + 3, -np.inf)
                z[0] = 0.0
                return z

        cfg = SamplingConfig(seed=0, **GREEDY)
        m, d = 3, 2
        dg, _, _ = generate(SpyModel(), cfg, m, d, 4, 5)
        for f, j in queried:
            assert f >= d * (j - 1)  # never queried inside the leading pads
        # leading pads present in the delayed grid
        assert dg.ids[0, 1] == dg.pad_id and dg.ids[1, 2] == dg.pad_id
