import pytest

from fgovd.errors import ConfigurationError
from fgovd.metrics import coco_map, median_rank, validate_predictions
from fgovd.synthdet import SynthProfile, run_synth

from fixtures import quick_benchmark


class TestSynthProfile:
    def test_parse_shorthand(self):
        assert SynthProfile.parse("perfect").kind == "perfect"
        noisy = SynthProfile.parse("noisy:0.6:0.2:0.1", seed=4)
        assert (noisy.mu, noisy.sigma, noisy.jitter, noisy.seed) == (0.6, 0.2, 0.1, 4)

    def test_invalid_profiles_rejected(self):
        with pytest.raises(ConfigurationError):
            SynthProfile(kind="psychic")
        with pytest.raises(ConfigurationError):
            SynthProfile(kind="noisy", sigma=-1)
        with pytest.raises(ConfigurationError):
            SynthProfile(kind="noisy", jitter=0.9)


class TestRunSynth:
    def test_perfect_one_prediction_per_object(self):
        benchmark = quick_benchmark(5, 2, n=4, seed=1)
        preds = run_synth(benchmark, SynthProfile(kind="perfect"))
        n_objects = sum(len(g.object_ids) for g in benchmark.groups)
        assert len(preds) == n_objects
        validate_predictions(benchmark, preds)
        for pred in preds:
            assert pred.scores[0] == 1.0
            assert all(s == 0.0 for s in pred.scores[1:])

    def test_perfect_scores_perfectly(self):
        benchmark = quick_benchmark(5, 2, n=4, seed=1)
        preds = run_synth(benchmark, SynthProfile(kind="perfect"))
        assert coco_map(benchmark, preds).map == pytest.approx(1.0, abs=1e-9)
        assert median_rank(benchmark, preds).median == 1

    def test_deterministic_under_seed(self):
        benchmark = quick_benchmark(5, 2, n=4, seed=1)
        a = run_synth(benchmark, SynthProfile(kind="random", seed=7))
        b = run_synth(benchmark, SynthProfile(kind="random", seed=7))
        c = run_synth(benchmark, SynthProfile(kind="random", seed=8))
        assert a == b
        assert a != c

    def test_noisy_scores_within_bounds(self):
        benchmark = quick_benchmark(5, 2, n=4, seed=1)
        preds = run_synth(
            benchmark, SynthProfile(kind="noisy", mu=0.7, sigma=0.15, seed=2)
        )
        validate_predictions(benchmark, preds)
        for pred in preds:
            assert 0.0 <= pred.scores[0] <= 1.0
            assert all(0.0 <= s <= 0.7 for s in pred.scores[1:])

    def test_noisy_jitter_moves_boxes(self):
        benchmark = quick_benchmark(3, 2, n=3, seed=1)
        still = run_synth(benchmark, SynthProfile(kind="noisy", jitter=0.0, seed=3))
        moved = run_synth(benchmark, SynthProfile(kind="noisy", jitter=0.2, seed=3))
        gt = {(p.image_id, p.group_id, i): p.bbox for i, p in enumerate(still)}
        assert any(
            gt[(p.image_id, p.group_id, i)] != p.bbox for i, p in enumerate(moved)
        )
