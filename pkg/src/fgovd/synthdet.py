"""Synthetic detectors over a benchmark, used as metric oracles.

The perfect profile echoes ground truth; the random profile draws i.i.d.
uniform scores; the noisy profile separates positive and negative score
distributions by a margin so accuracy degrades predictably as the
vocabulary grows.
"""

from __future__ import annotations

from dataclasses import dataclass

from .benchkit import Benchmark
from .errors import ConfigurationError
from .metrics import Prediction
from .negatives import derive_rng

SYNTH_KINDS = ("perfect", "random", "noisy")


@dataclass(frozen=True)
class SynthProfile:
    kind: str  # perfect | random | noisy
    mu: float = 0.7  # noisy: mean positive score
    sigma: float = 0.15  # noisy: positive score spread
    jitter: float = 0.0  # box jitter as a fraction of bbox size
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ConfigurationError(f"unknown synth kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if not 0 <= self.jitter <= 0.5:
            raise ConfigurationError("jitter must be in [0, 0.5]")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SynthProfile":
        """Parse CLI shorthand: 'perfect', 'random', 'noisy:0.7:0.15'."""
        parts = text.split(":")
        kind = parts[0]
        kwargs: dict = {"seed": seed}
        if len(parts) > 1:
            kwargs["mu"] = float(parts[1])
        if len(parts) > 2:
            kwargs["sigma"] = float(parts[2])
        if len(parts) > 3:
            kwargs["jitter"] = float(parts[3])
        return cls(kind=kind, **kwargs)


def run_synth(benchmark: Benchmark, profile: SynthProfile) -> list[Prediction]:
    """One prediction per ground-truth object, per-group derived seeds."""
    objects = benchmark.object_index()
    preds: list[Prediction] = []
    for group in benchmark.groups:
        rng = derive_rng(profile.seed, group.group_id)
        size = group.vocabulary.size
        for object_id in group.object_ids:
            obj = objects[(group.image_id, object_id)]
            x, y, w, h = obj.bbox
            if profile.kind == "perfect":
                scores = [1.0] + [0.0] * (size - 1)
                bbox = obj.bbox
            elif profile.kind == "random":
                scores = [rng.random() for _ in range(size)]
                bbox = obj.bbox
            else:
                positive = min(1.0, max(0.0, rng.gauss(profile.mu, profile.sigma)))
                scores = [positive] + [
                    rng.uniform(0.0, profile.mu) for _ in range(size - 1)
                ]
                j = profile.jitter
                bbox = (
                    x + rng.uniform(-j, j) * w,
                    y + rng.uniform(-j, j) * h,
                    max(1e-6, w * (1 + rng.uniform(-j, j))),
                    max(1e-6, h * (1 + rng.uniform(-j, j))),
                )
            preds.append(
                Prediction(
                    image_id=group.image_id,
                    group_id=group.group_id,
                    bbox=bbox,
                    scores=tuple(scores),
                )
            )
    return preds
