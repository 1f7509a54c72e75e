"""Recursive-denoising training (single scale and hierarchical scales) with AdamW.

Each training sample is walked from ``t = T`` down to ``1``. At every step
fresh noise scaled by ``t/T`` is added to the running estimate, the network
predicts the total noise relative to the labels, the parameters are updated,
and the pre-update prediction is subtracted to form the next estimate. The
estimate is carried as plain data, so no gradient flows through the recursion.
"""

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import augment as augment_sample
from .dataset import is_one_hot, one_hot_encode, resize_image, resize_labels
from .denoiser import DenoiserNetwork
from .diffusion import diffuse, make_schedule, mse_loss, recover_clean, total_noise
from .errors import InvalidParameterError, ShapeError, TrainingDivergedError, ValidationError
from .sampler import scale_ladder


@dataclass(frozen=True)
class TrainConfig:
    T: int = 25
    M: int = 1
    lr: float = 5e-5
    lr_decay_gamma: float = 0.95
    weight_decay: float = 1e-3
    clip_norm: float = 1.0
    epochs: int = 70
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.T < 1:
            raise InvalidParameterError("T must be >= 1")
        if self.M < 1:
            raise InvalidParameterError("M must be >= 1")
        if self.lr < 0:
            raise InvalidParameterError("lr must be >= 0")
        if not 0 < self.lr_decay_gamma <= 1:
            raise InvalidParameterError("lr_decay_gamma must be in (0, 1]")
        if self.clip_norm <= 0:
            raise InvalidParameterError("clip_norm must be > 0")
        if self.epochs < 0:
            raise InvalidParameterError("epochs must be >= 0")
        if self.weight_decay < 0:
            raise InvalidParameterError("weight_decay must be >= 0")

    def lr_at_epoch(self, epoch):
        return self.lr * self.lr_decay_gamma ** epoch

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 0.0

    @classmethod
    def for_params(cls, params, lr):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, lr)


def global_norm(grads):
    return math.sqrt(sum(float(np.dot(g.ravel().astype(np.float64), g.ravel().astype(np.float64)))
                         for g in grads.values()))


def clip_gradients(grads, max_norm):
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingDivergedError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


def optimizer_step(params, grads, opt, cfg):
    """Global-norm clipping followed by an AdamW update (decoupled weight decay)."""
    if grads.keys() != params.keys():
        raise ShapeError("gradient and parameter names differ")
    clip_gradients(grads, cfg.clip_norm)
    opt.step += 1
    lr = opt.lr
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** opt.step
    bc2 = 1.0 - b2 ** opt.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if cfg.weight_decay:
            p -= (lr * cfg.weight_decay) * p
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.eps)
    return params, opt


def _check_labels(labels_onehot, image):
    if labels_onehot.ndim != 3 or image.ndim != 3 or labels_onehot.shape[:2] != image.shape[:2]:
        raise ShapeError(f"labels {labels_onehot.shape} do not match image {image.shape}")
    if not is_one_hot(labels_onehot):
        raise ValidationError("training labels must be strictly one-hot")


def _update(net, noisy, image, target_clean, t, opt, cfg):
    pred = net.forward(noisy, image, t)
    loss, grad = mse_loss(pred, total_noise(noisy, target_clean))
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at t={t}")
    grads = net.backward(grad)
    optimizer_step(net.parameters(), grads, opt, cfg)
    return loss, pred


def train_sample_recursive(net, image, labels_onehot, cfg, opt, rng, on_step=None):
    """One sample of recursive denoising; returns the T losses in execution order."""
    image = np.asarray(image, dtype=net.dtype)
    labels_onehot = np.asarray(labels_onehot, dtype=net.dtype)
    _check_labels(labels_onehot, image)
    schedule = make_schedule(cfg.T)
    est = rng.standard_normal(labels_onehot.shape).astype(net.dtype)
    losses = []
    for t in range(cfg.T, 0, -1):
        noisy, _ = diffuse(est, t, schedule, rng)
        if on_step is not None:
            on_step(t=t, scale=1, noisy=noisy.copy())
        loss, pred = _update(net, noisy, image, labels_onehot, t, opt, cfg)
        est = recover_clean(noisy, pred)
        losses.append(loss)
    return losses


def train_sample_multiscale(net, image, labels_onehot, cfg, opt, rng, on_step=None):
    """One sample of hierarchical-scale recursive denoising.

    For each t the running estimate visits scales m = M..1 (coarse to fine),
    being resized bilinearly between them; labels are resized by nearest
    neighbour and re-encoded. Returns the T*M losses in execution order.
    """
    image = np.asarray(image, dtype=net.dtype)
    labels_onehot = np.asarray(labels_onehot, dtype=net.dtype)
    _check_labels(labels_onehot, image)
    H, W, C = labels_onehot.shape
    div = 2 ** (cfg.M - 1) * 2 ** net.config.depth
    if H % div or W % div:
        raise ShapeError(f"{W}x{H} is not divisible by 2^(M-1) * 2^depth = {div}")
    ladder = scale_ladder(W, H, cfg.M)
    index_map = np.argmax(labels_onehot, axis=-1)
    images = [resize_image(image, w, h).astype(net.dtype) for w, h in ladder]
    targets = [one_hot_encode(resize_labels(index_map, w, h), C, net.dtype) for w, h in ladder]
    schedule = make_schedule(cfg.T)
    est = rng.standard_normal(labels_onehot.shape).astype(net.dtype)
    losses = []
    for t in range(cfg.T, 0, -1):
        for level, ((w, h), x, target) in enumerate(zip(ladder, images, targets)):
            if est.shape[:2] != (h, w):
                est = resize_image(est, w, h).astype(net.dtype, copy=False)
            noisy, _ = diffuse(est, t, schedule, rng)
            if on_step is not None:
                on_step(t=t, scale=cfg.M - level, noisy=noisy.copy())
            loss, pred = _update(net, noisy, x, target, t, opt, cfg)
            est = recover_clean(noisy, pred)
            losses.append(loss)
    return losses


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    updates: int = 0
    wall_clock: float = 0.0
    checksum: str = ""

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingState:
    """Everything needed to continue training bit-identically from an epoch boundary."""

    net: DenoiserNetwork
    opt: OptimizerState
    rng: np.random.Generator
    epoch: int = 0
    report: TrainReport = field(default_factory=TrainReport)


def init_training(model_cfg, cfg, dtype=np.float32):
    init_seq, train_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    net = DenoiserNetwork(model_cfg, np.random.default_rng(init_seq), dtype=dtype)
    opt = OptimizerState.for_params(net.parameters(), cfg.lr)
    return TrainingState(net, opt, np.random.default_rng(train_seq))


def train(dataset, cfg, model_cfg=None, augment=None, state=None, on_epoch_end=None, log=None,
          keep_step_losses=True):
    """Train for ``cfg.epochs`` epochs; ``cfg.M > 1`` selects hierarchical-scale training.

    ``dataset`` is a sequence of ``Sample``. Pass ``state`` to resume from a
    checkpoint; ``on_epoch_end(state)`` runs after every epoch and ``log`` (a
    writable text file) receives one line per update.
    """
    if len(dataset) == 0:
        raise InvalidParameterError("empty dataset")
    if state is None:
        if model_cfg is None:
            raise InvalidParameterError("model_cfg is required when not resuming")
        state = init_training(model_cfg, cfg)
    net, opt, rng, report = state.net, state.opt, state.rng, state.report
    C = net.config.num_classes
    trainer = train_sample_recursive if cfg.M == 1 else train_sample_multiscale
    start = time.perf_counter()
    for epoch in range(state.epoch, cfg.epochs):
        opt.lr = cfg.lr_at_epoch(epoch)
        epoch_losses = []
        for idx in rng.permutation(len(dataset)):
            s = dataset[idx]
            if augment is not None:
                s = augment_sample(s, augment, rng)
            losses = trainer(net, s.image, one_hot_encode(s.labels, C, net.dtype), cfg, opt, rng)
            if log is not None:
                for k, loss in enumerate(losses):
                    t = cfg.T - k // cfg.M
                    scale = cfg.M - k % cfg.M
                    log.write(f"epoch={epoch} step={report.updates + k + 1} sample={idx} "
                              f"scale={scale} t={t} loss={loss:.6g}\n")
            report.updates += len(losses)
            epoch_losses.extend(losses)
        report.epoch_losses.append(float(np.mean(epoch_losses)))
        if keep_step_losses:
            report.step_losses.append(epoch_losses)
        state.epoch = epoch + 1
        opt.lr = cfg.lr_at_epoch(state.epoch)
        report.checksum = net.checksum()
        if on_epoch_end is not None:
            on_epoch_end(state)
    report.wall_clock += time.perf_counter() - start
    report.checksum = net.checksum()
    return net, report
