"""Training objective: Charbonnier reconstruction term plus a weighted
multi-stage perceptual term, combined as 1.0 * content + 0.001 * perceptual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import Tensor

CHARBONNIER_EPS = 1e-6

STAGE_WIDTHS = (64, 128, 256, 512, 512)


@dataclass(frozen=True)
class LossWeights:
    alpha_per: float = 0.001
    alpha_cont: float = 1.0
    feature_weights: tuple = (0.1, 0.1, 1.0, 1.0, 1.0)
    epsilon: float = CHARBONNIER_EPS

    def __post_init__(self):
        if self.alpha_per < 0 or self.alpha_cont < 0 or \
                any(w < 0 for w in self.feature_weights):
            raise ConfigError("loss weights must be nonnegative")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if len(self.feature_weights) != len(STAGE_WIDTHS):
            raise ConfigError(
                f"need {len(STAGE_WIDTHS)} feature weights, got "
                f"{len(self.feature_weights)}")


def charbonnier(pred, target, eps=CHARBONNIER_EPS):
    """mean(sqrt((pred - target)^2 + eps)); floor sqrt(eps) at equality."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return T.mean(T.sqrt(T.square(pred - target) + eps))


class FeatureExtractor:
    """Frozen five-stage convolutional feature pyramid.

    Stage k (0-based): two 3x3 convs with ReLUs at width STAGE_WIDTHS[k],
    preceded by 2x2 average pooling for k > 0, so stage k features sit at
    input/2^k resolution. Weights are He-normal from a fixed seed by default
    and can be replaced with externally trained ones via ``load_state``.
    """

    def __init__(self, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        cin = 3
        for width in STAGE_WIDTHS:
            w1 = self._he(rng, (width, cin, 3, 3), dtype)
            w2 = self._he(rng, (width, width, 3, 3), dtype)
            self.weights.append((Tensor(w1), Tensor(w2)))
            self.biases.append((Tensor(np.zeros(width, dtype=dtype)),
                                Tensor(np.zeros(width, dtype=dtype))))
            cin = width

    @staticmethod
    def _he(rng, shape, dtype):
        fan_in = shape[1] * shape[2] * shape[3]
        return (rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)).astype(dtype)

    def state(self):
        out = {}
        for i, ((w1, w2), (b1, b2)) in enumerate(zip(self.weights, self.biases)):
            out[f"stage{i}.w1"] = w1.data
            out[f"stage{i}.b1"] = b1.data
            out[f"stage{i}.w2"] = w2.data
            out[f"stage{i}.b2"] = b2.data
        return out

    def load_state(self, state):
        current = self.state()
        missing = set(current) - set(state)
        if missing:
            raise CheckpointError(f"extractor state missing keys: {sorted(missing)}")
        for i, ((w1, w2), (b1, b2)) in enumerate(zip(self.weights, self.biases)):
            for t, key in ((w1, f"stage{i}.w1"), (b1, f"stage{i}.b1"),
                           (w2, f"stage{i}.w2"), (b2, f"stage{i}.b2")):
                arr = np.asarray(state[key])
                if arr.shape != t.shape:
                    raise CheckpointError(
                        f"extractor key {key}: shape {arr.shape} != {t.shape}")
                t.data = arr.astype(t.dtype)

    def __call__(self, x):
        """Five feature maps for a (3, H, W) input, H and W >= 32."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[0] != 3:
            raise ShapeError(f"expected (3, H, W) input, got {x.shape}")
        h, w = x.shape[1:]
        if h < 32 or w < 32 or h % 16 or w % 16:
            raise ShapeError(
                f"extractor input must be >= 32x32 and divisible by 16, got {h}x{w}")
        feats = []
        for i, ((w1, w2), (b1, b2)) in enumerate(zip(self.weights, self.biases)):
            if i > 0:
                x = T.avg_pool2d(x, 2)
            x = T.relu(T.conv2d(x, w1, padding=1) + T.reshape(b1, (b1.shape[0], 1, 1)))
            x = T.relu(T.conv2d(x, w2, padding=1) + T.reshape(b2, (b2.shape[0], 1, 1)))
            feats.append(x)
        return feats


def target_features(target, extractor):
    """Detached feature maps for a fixed target, reusable across steps."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    with T.no_grad():
        return [f.data for f in extractor(target)]


def perceptual(pred, target, extractor, weights=(0.1, 0.1, 1.0, 1.0, 1.0),
               target_feats=None):
    """Sum of weighted mean-absolute feature differences across stages.

    ``target_feats`` short-circuits the target pass with arrays from
    :func:`target_features`; the extractor is frozen, so the numbers are
    identical either way.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if target_feats is None:
        target_feats = target_features(target, extractor)
    pfeats = extractor(pred)
    total = None
    for w, fp, ft in zip(weights, pfeats, target_feats):
        term = T.mean(T.absolute(fp - Tensor(np.asarray(ft)))) * float(w)
        total = term if total is None else total + term
    return total


def total_loss(pred, target, extractor, lw: LossWeights = None,
               target_feats=None):
    """Weighted objective. Returns (scalar tensor, float parts for logging)."""
    lw = lw or LossWeights()
    cont = charbonnier(pred, target, lw.epsilon)
    per = perceptual(pred, target, extractor, lw.feature_weights, target_feats)
    total = cont * lw.alpha_cont + per * lw.alpha_per
    parts = {"loss": float(total.data), "charbonnier": float(cont.data),
             "perceptual": float(per.data)}
    return total, parts
