"""Multi-task text/non-text CNN: architecture, three-task loss and staged training.

Main branch::

    32x32x3 -conv9-> 24x24 -conv7-> 18x18 -pool3/3-> 6x6 -conv5-> 2x2 -> fc -> fc
                                                      -> binary head (2)
                                                      -> character head (62)

Mask branch, taken from the second conv output before pooling::

    18x18 -deconv7-> 24x24 -deconv9-> 32x32 -> sigmoid
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tinynn as nn

log = logging.getLogger(__name__)

PATCH = 32
N_CLASSES = 62
CHARSET = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"

LAYER_ORDER = (
    "conv1",
    "conv2",
    "conv3",
    "fc1",
    "fc2",
    "head_binary",
    "head_label",
    "deconv1",
    "deconv2",
)
MAIN_LAYERS = ("conv1", "conv2", "conv3", "fc1", "fc2")
STAGE1_LAYERS = MAIN_LAYERS + ("head_label", "deconv1", "deconv2")
STAGE2_LAYERS = MAIN_LAYERS + ("head_binary", "head_label")


@dataclass
class MultiTaskSample:
    """One training record. Missing targets are ``None``."""

    patch: np.ndarray  # (32, 32, 3) float in [0, 1]
    mask: np.ndarray | None = None  # (32, 32) in {0, 1}
    char_label: int | None = None
    binary_label: int | None = None

    def __post_init__(self):
        if self.patch.shape != (PATCH, PATCH, 3):
            raise ValueError(f"patch must be 32x32x3, got {self.patch.shape}")
        if self.mask is None and self.char_label is None and self.binary_label is None:
            raise ValueError("sample carries no target")
        if self.mask is not None and not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")


@dataclass
class SampleSet:
    """Column-stacked samples. Missing labels are -1; ``has_mask`` flags masks."""

    patches: np.ndarray  # (N, 32, 32, 3) float32
    masks: np.ndarray  # (N, 32, 32) float32, zeros where absent
    has_mask: np.ndarray  # (N,) bool
    labels: np.ndarray  # (N,) int64
    binary: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.patches)

    @classmethod
    def from_samples(cls, samples) -> "SampleSet":
        samples = list(samples)
        n = len(samples)
        patches = np.zeros((n, PATCH, PATCH, 3), np.float32)
        masks = np.zeros((n, PATCH, PATCH), np.float32)
        has_mask = np.zeros(n, bool)
        labels = np.full(n, -1, np.int64)
        binary = np.full(n, -1, np.int64)
        for i, s in enumerate(samples):
            patches[i] = s.patch
            if s.mask is not None:
                masks[i] = s.mask
                has_mask[i] = True
            if s.char_label is not None:
                labels[i] = s.char_label
            if s.binary_label is not None:
                binary[i] = s.binary_label
        return cls(patches, masks, has_mask, labels, binary)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(
            self.patches[idx], self.masks[idx], self.has_mask[idx], self.labels[idx], self.binary[idx]
        )

    @staticmethod
    def concat(*sets) -> "SampleSet":
        return SampleSet(*(np.concatenate(cols) for cols in zip(*(
            (s.patches, s.masks, s.has_mask, s.labels, s.binary) for s in sets
        ))))


@dataclass
class StageSchedule:
    stage1_iters: int = 3000
    stage2_iters: int = 7000
    lambda_label_stage1: float = 1.0
    lambda_mask_stage1: float = 0.3
    lambda_label_stage2: float = 0.3

    def __post_init__(self):
        if self.stage1_iters < 1 or self.stage2_iters < 1:
            raise ValueError("both stages need at least one iteration")
        if min(self.lambda_label_stage1, self.lambda_mask_stage1, self.lambda_label_stage2) < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def total(self) -> int:
        return self.stage1_iters + self.stage2_iters


@dataclass
class TextCnnModel:
    layers: dict[str, nn.LayerParams]

    @classmethod
    def initialize(
        cls, seed: int = 0, n_classes: int = N_CLASSES, widths=(32, 48, 64), fc: int = 1024
    ) -> "TextCnnModel":
        """He-style init for every layer; deconv weights copied from the convs they mirror."""
        rng = np.random.default_rng(seed)
        c1, c2, c3 = widths

        def he(shape, fan_in):
            return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)

        def zeros(n):
            return np.zeros(n, np.float32)

        L = {
            "conv1": nn.LayerParams("CONV", he((c1, 3, 9, 9), 3 * 81), zeros(c1)),
            "conv2": nn.LayerParams("CONV", he((c2, c1, 7, 7), c1 * 49), zeros(c2)),
            "conv3": nn.LayerParams("CONV", he((c3, c2, 5, 5), c2 * 25), zeros(c3)),
            "fc1": nn.LayerParams("DENS", he((4 * c3, fc), 4 * c3), zeros(fc)),
            "fc2": nn.LayerParams("DENS", he((fc, fc), fc), zeros(fc)),
            "head_binary": nn.LayerParams("DENS", he((fc, 2), fc), zeros(2)),
            "head_label": nn.LayerParams("DENS", he((fc, n_classes), fc), zeros(n_classes)),
        }
        # conv2 (c1 -> c2) transposed maps c2 -> c1; conv1 (3 -> c1) transposed,
        # averaged over RGB, maps c1 -> 1 mask channel.
        L["deconv1"] = nn.LayerParams("DCNV", L["conv2"].w.copy(), zeros(c1))
        L["deconv2"] = nn.LayerParams(
            "DCNV", L["conv1"].w.mean(axis=1, keepdims=True).astype(np.float32), zeros(1)
        )
        return cls(L)

    @classmethod
    def zeros_like(cls, other: "TextCnnModel") -> "TextCnnModel":
        return cls(
            {
                k: nn.LayerParams(p.kind, np.zeros_like(p.w), np.zeros_like(p.b))
                for k, p in other.layers.items()
            }
        )

    @property
    def n_classes(self) -> int:
        return self.layers["head_label"].w.shape[1]

    def params(self, names=LAYER_ORDER):
        return [self.layers[n] for n in names]

    def copy(self) -> "TextCnnModel":
        return TextCnnModel({k: p.copy() for k, p in self.layers.items()})

    def save(self, path) -> None:
        nn.write_tcnn1(path, [(n, self.layers[n]) for n in LAYER_ORDER])

    @classmethod
    def load(cls, path) -> "TextCnnModel":
        layers = dict(nn.read_tcnn1(path))
        missing = set(LAYER_ORDER) - set(layers)
        if missing:
            raise ValueError(f"{path}: missing layers {sorted(missing)}")
        return cls(layers)


# ---------------------------------------------------------------------------
# forward / backward


def _as_batch(patches) -> np.ndarray:
    x = np.asarray(patches, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (PATCH, PATCH, 3):
        raise nn.ShapeError(f"expected patches of shape (32, 32, 3), got {x.shape[1:]}")
    # centre inputs so the first layer sees zero-mean data
    return x - 0.5


def _forward(model: TextCnnModel, x, main=True, mask=True):
    L = model.layers
    cache = {}
    out = {}
    h, cache["conv1"] = nn.conv_forward(x, L["conv1"])
    h, cache["relu1"] = nn.relu_forward(h)
    h, cache["conv2"] = nn.conv_forward(h, L["conv2"])
    c2, cache["relu2"] = nn.relu_forward(h)
    out["conv2"] = c2
    if main:
        h, cache["pool"] = nn.maxpool_forward(c2, 3, 3)
        out["pool"] = h
        h, cache["conv3"] = nn.conv_forward(h, L["conv3"])
        h, cache["relu3"] = nn.relu_forward(h)
        out["conv3"] = h
        h, cache["fc1"] = nn.dense_forward(h, L["fc1"])
        h, cache["relu4"] = nn.relu_forward(h)
        h, cache["fc2"] = nn.dense_forward(h, L["fc2"])
        h, cache["relu5"] = nn.relu_forward(h)
        out["binary"], cache["head_binary"] = nn.dense_forward(h, L["head_binary"])
        out["label"], cache["head_label"] = nn.dense_forward(h, L["head_label"])
    if mask:
        m, cache["deconv1"] = nn.deconv_forward(c2, L["deconv1"])
        m, cache["relu6"] = nn.relu_forward(m)
        out["deconv1"] = m
        m, cache["deconv2"] = nn.deconv_forward(m, L["deconv2"])
        out["mask"] = nn.sigmoid(m[..., 0])
    for v in out.values():
        if not np.isfinite(v).all():
            raise FloatingPointError("non-finite activation in forward pass")
    return out, cache


def _backward(model: TextCnnModel, out, cache, d_binary=None, d_label=None, d_mask=None):
    """Accumulate parameter gradients given upstream gradients of the heads.

    ``d_mask`` is the gradient w.r.t. the sigmoid output.
    """
    L = model.layers
    dc2 = None
    if d_binary is not None or d_label is not None:
        dh = 0
        if d_binary is not None:
            dh = dh + nn.dense_backward(d_binary, cache["head_binary"], L["head_binary"])
        if d_label is not None:
            dh = dh + nn.dense_backward(d_label, cache["head_label"], L["head_label"])
        dh = nn.relu_backward(dh, cache["relu5"])
        dh = nn.dense_backward(dh, cache["fc2"], L["fc2"])
        dh = nn.relu_backward(dh, cache["relu4"])
        dh = nn.dense_backward(dh, cache["fc1"], L["fc1"])
        dh = nn.relu_backward(dh, cache["relu3"])
        dh = nn.conv_backward(dh, cache["conv3"], L["conv3"])
        dc2 = nn.maxpool_backward(dh, cache["pool"])
    if d_mask is not None:
        s = out["mask"]
        dm = (d_mask * s * (1 - s))[..., None]
        dm = nn.deconv_backward(dm, cache["deconv2"], L["deconv2"])
        dm = nn.relu_backward(dm, cache["relu6"])
        dm = nn.deconv_backward(dm, cache["deconv1"], L["deconv1"])
        dc2 = dm if dc2 is None else dc2 + dm
    if dc2 is None:
        return
    dh = nn.relu_backward(dc2, cache["relu2"])
    dh = nn.conv_backward(dh, cache["conv2"], L["conv2"])
    dh = nn.relu_backward(dh, cache["relu1"])
    nn.conv_backward(dh, cache["conv1"], L["conv1"], need_dx=False)


def forward_main(model: TextCnnModel, patch):
    """Binary and character logits for one patch ``(32,32,3)`` or a batch ``(N,32,32,3)``."""
    single = np.ndim(patch) == 3
    out, _ = _forward(model, _as_batch(patch), main=True, mask=False)
    if single:
        return out["binary"][0], out["label"][0]
    return out["binary"], out["label"]


def forward_mask(model: TextCnnModel, patch) -> np.ndarray:
    """Per-pixel text probability, ``(32, 32)`` for one patch or ``(N, 32, 32)``."""
    single = np.ndim(patch) == 3
    out, _ = _forward(model, _as_batch(patch), main=False, mask=True)
    return out["mask"][0] if single else out["mask"]


def text_probability(model: TextCnnModel, patches, batch_size: int = 256) -> np.ndarray:
    """Softmax probability of the text class for every patch."""
    patches = np.asarray(patches, np.float32)
    if len(patches) == 0:
        return np.zeros(0, np.float32)
    probs = []
    for i in range(0, len(patches), batch_size):
        logits, _ = forward_main(model, patches[i : i + batch_size])
        probs.append(nn.softmax(logits)[:, 1])
    return np.concatenate(probs)


# ---------------------------------------------------------------------------
# losses


def _stage_weights(stage: int, schedule: StageSchedule):
    if stage == 1:
        return {"label": schedule.lambda_label_stage1, "mask": schedule.lambda_mask_stage1}
    if stage == 2:
        return {"binary": 1.0, "label": schedule.lambda_label_stage2}
    raise ValueError(f"stage must be 1 or 2, got {stage}")


def loss_and_grads(model: TextCnnModel, batch: SampleSet, stage: int, schedule: StageSchedule):
    """Weighted multi-task loss over a batch, accumulating gradients into ``model``.

    Each task loss is averaged over the whole batch; samples missing a target
    contribute zero. Returns ``(total, {task: unweighted mean loss})``.
    """
    w = _stage_weights(stage, schedule)
    if stage == 2 and np.any(batch.binary < 0):
        raise ValueError("stage 2 requires a binary label on every sample")
    n = len(batch)
    use_mask = w.get("mask", 0) > 0
    use_label = w.get("label", 0) > 0 and np.any(batch.labels >= 0)
    x = _as_batch(batch.patches)
    out, cache = _forward(model, x, main=True, mask=use_mask)
    parts = {}
    d_binary = d_label = d_mask = None
    if "binary" in w:
        loss, g = nn.softmax_xent(out["binary"], batch.binary)
        parts["binary"] = float(loss.sum() / n)
        d_binary = g * (w["binary"] / n)
    if "label" in w:
        loss, g = nn.softmax_xent(out["label"], batch.labels)
        parts["label"] = float(loss.sum() / n)
        if use_label:
            d_label = g * (w["label"] / n)
    if "mask" in w:
        if use_mask:
            hm = batch.has_mask.astype(np.float32)
            loss, g = nn.l2_mask_loss(out["mask"], batch.masks)
            parts["mask"] = float((loss * hm).sum() / n)
            d_mask = g * (hm[:, None, None] * (w["mask"] / n))
        else:
            parts["mask"] = 0.0
    _backward(model, out, cache, d_binary, d_label, d_mask)
    total = sum(w[k] * parts[k] for k in parts)
    return total, parts


def multitask_loss(model: TextCnnModel, batch: SampleSet, stage: int, schedule: StageSchedule) -> float:
    """Scalar weighted loss without touching the model's gradients."""
    w = _stage_weights(stage, schedule)
    if stage == 2 and np.any(batch.binary < 0):
        raise ValueError("stage 2 requires a binary label on every sample")
    n = len(batch)
    out, _ = _forward(model, _as_batch(batch.patches), main=True, mask=w.get("mask", 0) > 0)
    total = 0.0
    if "binary" in w:
        total += w["binary"] * nn.softmax_xent(out["binary"], batch.binary)[0].sum() / n
    if "label" in w:
        total += w["label"] * nn.softmax_xent(out["label"], batch.labels)[0].sum() / n
    if w.get("mask", 0) > 0:
        loss, _ = nn.l2_mask_loss(out["mask"], batch.masks)
        total += w["mask"] * (loss * batch.has_mask).sum() / n
    return float(total)


# ---------------------------------------------------------------------------
# training


@dataclass
class LossRecord:
    iteration: int
    task: str
    loss: float

    def to_line(self) -> str:
        return f"{self.iteration}\t{self.task}\t{self.loss:.6g}"


@dataclass
class TrainResult:
    model: TextCnnModel
    curve: list = field(default_factory=list)  # LossRecord
    checkpoints: list = field(default_factory=list)  # (iteration, {metric: value})


class _Batches:
    """Epoch-shuffled minibatch indices, deterministic given the generator."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.bs, self.rng = n, min(batch_size, n), rng
        self.perm = rng.permutation(n)
        self.pos = 0
        self.epoch = 0

    def next(self):
        if self.pos + self.bs > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
            self.epoch += 1
        idx = self.perm[self.pos : self.pos + self.bs]
        self.pos += self.bs
        return idx


def run_stage(
    model: TextCnnModel,
    data: SampleSet,
    stage: int,
    iters: int,
    schedule: StageSchedule,
    cfg: nn.TrainConfig,
    start_iter: int = 0,
    rng: np.random.Generator | None = None,
    curve: list | None = None,
    on_epoch=None,
):
    """Run ``iters`` SGD iterations of one stage in place.

    The step learning-rate schedule spans this stage alone; ``start_iter`` only
    numbers the iterations in the loss curve. ``on_epoch(iteration)`` fires
    each time the sampler wraps.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    names = STAGE1_LAYERS if stage == 1 else STAGE2_LAYERS
    if stage == 1 and schedule.lambda_mask_stage1 == 0:
        names = MAIN_LAYERS + ("head_label",)
    if stage == 2 and schedule.lambda_label_stage2 == 0:
        names = MAIN_LAYERS + ("head_binary",)
    params = model.params(names)
    sampler = _Batches(len(data), cfg.batch_size, rng)
    curve = curve if curve is not None else []
    for it in range(start_iter, start_iter + iters):
        epoch = sampler.epoch
        idx = sampler.next()
        if sampler.epoch != epoch and on_epoch is not None:
            on_epoch(it)
        for p in params:
            p.zero_grad()
        total, parts = loss_and_grads(model, data.subset(idx), stage, schedule)
        if not math.isfinite(total):
            raise FloatingPointError(f"loss diverged at iteration {it}")
        nn.sgd_step(params, cfg, nn.learning_rate_at(it - start_iter, iters, cfg))
        for task, v in parts.items():
            curve.append(LossRecord(it, task, v))
        curve.append(LossRecord(it, "total", total))
        if it % 500 == 0:
            log.info("stage %d iter %d loss %.4f %s", stage, it, total, parts)
    return curve


def train_staged(
    model: TextCnnModel,
    synthetic_set: SampleSet,
    binary_set: SampleSet,
    schedule: StageSchedule,
    cfg: nn.TrainConfig,
    holdout: SampleSet | None = None,
    stages=(1, 2),
) -> TrainResult:
    """Stage 1 (label + mask on synthetic data), then stage 2 (binary + label).

    When ``holdout`` is given, label error and mask distance on it are recorded
    at iteration 0 and at every stage-1 epoch boundary, plus the end of stage 1.
    """
    if 1 in stages and len(synthetic_set) == 0:
        raise ValueError("empty synthetic set")
    if 2 in stages and len(binary_set) == 0:
        raise ValueError("empty binary set")
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)

    def checkpoint(it):
        if holdout is not None:
            result.checkpoints.append(
                (
                    it,
                    {
                        "label_error": evaluate(model, holdout, "label"),
                        "mask_distance": evaluate(model, holdout, "mask"),
                    },
                )
            )

    if 1 in stages:
        checkpoint(0)
        run_stage(
            model, synthetic_set, 1, schedule.stage1_iters, schedule, cfg,
            start_iter=0, rng=rng,
            curve=result.curve, on_epoch=checkpoint,
        )
        checkpoint(schedule.stage1_iters)
    if 2 in stages:
        start = schedule.stage1_iters if 1 in stages else 0
        run_stage(
            model, binary_set, 2, schedule.stage2_iters, schedule, cfg,
            start_iter=start, rng=rng, curve=result.curve,
        )
    return result


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: TextCnnModel, data: SampleSet, task: str, batch_size: int = 256) -> float:
    """Binary error rate, character error rate, or mean squared-distance mask error."""
    if task == "binary":
        sel = data.binary >= 0
    elif task == "label":
        sel = data.labels >= 0
    elif task == "mask":
        sel = data.has_mask
    else:
        raise ValueError(f"unknown task {task!r}")
    idx = np.flatnonzero(sel)
    if len(idx) == 0:
        raise ValueError(f"no samples carry targets for task {task!r}")
    wrong = 0.0
    for i in range(0, len(idx), batch_size):
        part = data.subset(idx[i : i + batch_size])
        if task == "mask":
            pred = forward_mask(model, part.patches)
            wrong += float(nn.l2_mask_loss(pred, part.masks)[0].sum())
        else:
            binary, label = forward_main(model, part.patches)
            if task == "binary":
                wrong += int((binary.argmax(1) != part.binary).sum())
            else:
                wrong += int((label.argmax(1) != part.labels).sum())
    return wrong / len(idx)
