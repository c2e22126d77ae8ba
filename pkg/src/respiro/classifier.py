"""Patch-transformer spectrogram classifier with adversarial fine-tuning.

The encoder feeds two heads: a 4-way label classifier and a 2-way
real/synthetic discriminator that sits behind a gradient-reversal layer.
Training minimises ``L_CE + lambda * L_Dis``; because of the reversal the
shared encoder descends ``L_CE`` while ascending ``L_Dis``.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ArgumentError, ConfigError, ShapeError, TrainingError
from .metrics import confusion, icbhi_metrics
from .nn import LayerNorm, Linear, Module, Parameter, uniform_init
from .optim import Adam
from .serialize import config_tensors, load_checkpoint, read_config, save_checkpoint
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

LABELS = ("normal", "crackle", "wheeze", "both")
DOMAINS = ("real", "synthetic")


@dataclass(frozen=True)
class ClassifierConfig:
    n_frames: int = 501
    n_mels: int = 128
    patch_time: int = 16
    patch_freq: int = 16
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    n_label_classes: int = 4
    n_domain_classes: int = 2

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("encoder depth must be >= 1")
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ConfigError(
                f"a {self.n_frames}x{self.n_mels} input holds no whole "
                f"{self.patch_time}x{self.patch_freq} patch"
            )

    @property
    def grid(self):
        return self.n_frames // self.patch_time, self.n_mels // self.patch_freq

    @property
    def n_patches(self):
        return self.grid[0] * self.grid[1]

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown classifier config keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in data.items()})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 5e-5
    aft: bool = True
    gamma: float = 10.0
    lambda_scale: float = 1.0  # multiplies the schedule; 1 is the standard form

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lambda_scale < 0:
            raise ConfigError(f"lambda_scale must be >= 0, got {self.lambda_scale}")

    def lam(self, progress):
        return self.lambda_scale * lambda_schedule(progress, self.gamma) if self.aft else 0.0


@dataclass
class AftBatch:
    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=np.int64)
        n = len(self.features)
        if self.labels.shape != (n,) or self.domains.shape != (n,):
            raise ShapeError("AftBatch", (len(self.labels), len(self.domains)), (n, n))
        if n and (self.labels.min() < 0 or self.labels.max() >= len(LABELS)):
            raise ArgumentError(f"labels out of range: {sorted(set(self.labels.tolist()))}")
        if n and (self.domains.min() < 0 or self.domains.max() >= len(DOMAINS)):
            raise ArgumentError(f"domains out of range: {sorted(set(self.domains.tolist()))}")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return AftBatch(self.features[idx], self.labels[idx], self.domains[idx])


@dataclass
class LossBreakdown:
    l_ce: float
    l_dis: float
    l_final: float
    lam: float


class Attention(Module):
    def __init__(self, dim, heads, rng):
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)

    def forward(self, x):
        n, p, d = x.shape
        h = self.heads
        qkv = T.transpose(self.qkv(x).reshape(n, p, 3, h, d // h), (2, 0, 3, 1, 4))
        y = T.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        return self.out(T.transpose(y, (0, 2, 1, 3)).reshape(n, p, d))


class Block(Module):
    def __init__(self, dim, heads, mlp_ratio, rng):
        self.ln1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * mlp_ratio, rng)
        self.fc2 = Linear(dim * mlp_ratio, dim, rng)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(T.relu(self.fc1(self.ln2(x))))


class Encoder(Module):
    def __init__(self, config, rng):
        self.config = config
        d = config.embed_dim
        self.patch_proj = Linear(config.patch_time * config.patch_freq, d, rng)
        self.pos = Parameter(uniform_init(rng, (config.n_patches, d), d))
        self.blocks = [Block(d, config.heads, config.mlp_ratio, rng) for _ in range(config.depth)]
        self.ln = LayerNorm(d)

    def patchify(self, x):
        c = self.config
        n, frames, mels = x.shape
        nt, nf = frames // c.patch_time, mels // c.patch_freq
        if nt < 1 or nf < 1:
            raise ArgumentError(
                f"input {frames}x{mels} is smaller than one {c.patch_time}x{c.patch_freq} patch"
            )
        if (nt, nf) != c.grid:
            raise ShapeError("encoder input", (frames, mels), (c.n_frames, c.n_mels))
        x = x[:, : nt * c.patch_time, : nf * c.patch_freq]
        x = x.reshape(n, nt, c.patch_time, nf, c.patch_freq)
        return T.transpose(x, (0, 1, 3, 2, 4)).reshape(n, nt * nf, c.patch_time * c.patch_freq)

    def forward(self, features):
        x = features if isinstance(features, Tensor) else Tensor(features, dtype=self.pos.dtype)
        if x.ndim == 2:
            x = x.reshape((1,) + x.shape)
        if not np.all(np.isfinite(x.data)):
            raise ArgumentError("features contain non-finite values")
        x = self.patch_proj(self.patchify(x)) + self.pos
        for block in self.blocks:
            x = block(x)
        return self.ln(x).mean(axis=1)


class DomainHead(Module):
    def __init__(self, dim, n_out, rng):
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, n_out, rng)

    def forward(self, x):
        return self.fc2(T.relu(self.fc1(x)))


class AftClassifier(Module):
    def __init__(self, config=ClassifierConfig(), seed=0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.encoder = Encoder(config, rng)
        self.label_head = Linear(config.embed_dim, config.n_label_classes, rng)
        self.domain_head = DomainHead(config.embed_dim, config.n_domain_classes, rng)

    def encode(self, features):
        return self.encoder(features)

    def forward(self, features):
        return self.label_head(self.encode(features))

    def to_tensors(self):
        out = dict(self.state_dict())
        out.update(config_tensors("config", asdict(self.config)))
        return out

    @classmethod
    def from_tensors(cls, tensors):
        model = cls(ClassifierConfig.from_dict(read_config(tensors, "config")))
        model.load_state_dict({k: v for k, v in tensors.items() if "/" not in k})
        return model


def save_classifier(path, model):
    save_checkpoint(path, model.to_tensors())


def load_classifier(path):
    return AftClassifier.from_tensors(load_checkpoint(path))


def lambda_schedule(p, gamma=10.0):
    """``2 / (1 + exp(-gamma p)) - 1``: 0 at the start, approaching 1."""
    if not 0.0 <= p <= 1.0:
        raise ArgumentError(f"training progress must lie in [0, 1], got {p}")
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


def aft_loss(model, batch, lam, backward=True):
    """Joint loss; with ``backward`` the gradients land on the parameters."""
    emb = model.encode(batch.features)
    l_ce = T.cross_entropy(model.label_head(emb), batch.labels)
    l_dis = T.cross_entropy(model.domain_head(T.gradient_reverse(emb, 1.0)), batch.domains)
    total = l_ce + l_dis * float(lam)
    if backward:
        total.backward()
    ce, dis = float(l_ce.data), float(l_dis.data)
    return LossBreakdown(ce, dis, ce + float(lam) * dis, float(lam))


def predict(model, features, batch_size=64):
    """Label logits, ``N x 4``; the discriminator head is not used."""
    features = np.asarray(features, dtype=np.float32)
    single = features.ndim == 2
    if single:
        features = features[None]
    out = []
    with no_grad():
        for i in range(0, len(features), batch_size):
            out.append(model(features[i : i + batch_size]).data)
    logits = np.concatenate(out) if out else np.zeros((0, model.config.n_label_classes), np.float32)
    return logits[0] if single else logits


def embed(model, features, batch_size=64):
    features = np.asarray(features, dtype=np.float32)
    with no_grad():
        return np.concatenate(
            [model.encode(features[i : i + batch_size]).data for i in range(0, len(features), batch_size)]
        )


def discriminator_accuracy(model, data):
    """Held-out accuracy of the model's own domain head."""
    with no_grad():
        logits = model.domain_head(Tensor(embed(model, data.features))).data
    return 100.0 * float((logits.argmax(1) == data.domains).mean())


def evaluate(model, data):
    preds = predict(model, data.features).argmax(axis=1)
    return icbhi_metrics(confusion(preds, data.labels))


def fit(model, train, config, seed, test=None):
    """Train in place; returns ``(history, best_state)``.

    ``history`` holds one record per epoch in the training-log schema. The best
    state is the parameter snapshot with the highest test Score (earliest on
    ties), or the final state when no test set is given.
    """
    if len(train) == 0:
        raise ArgumentError("training set is empty")
    rng = np.random.default_rng(seed)
    opt = Adam(model.named_parameters(), lr=config.lr)
    history = []
    best_score, best_state = -1.0, None
    for epoch in range(config.epochs):
        lam = config.lam(epoch / config.epochs)
        order = rng.permutation(len(train))
        sums = np.zeros(2)
        correct = 0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = train.subset(order[start : start + config.batch_size])
            opt.zero_grad()
            parts = aft_loss(model, batch, lam)
            if not (math.isfinite(parts.l_ce) and math.isfinite(parts.l_dis)):
                raise TrainingError(f"non-finite loss in epoch {epoch + 1}")
            opt.step()
            sums += (parts.l_ce, parts.l_dis)
            n_batches += 1
        with no_grad():
            correct = int((predict(model, train.features).argmax(1) == train.labels).sum())
        l_ce, l_dis = sums / n_batches
        record = {
            "epoch": epoch + 1,
            "l_ce": float(l_ce),
            "l_dis": float(l_dis),
            "l_final": float(l_ce + lam * l_dis),
            "lambda": lam,
            "train_acc": 100.0 * correct / len(train),
            "se": None,
            "sp": None,
            "score": None,
        }
        if test is not None and len(test):
            report = evaluate(model, test)
            record.update(se=report.se, sp=report.sp, score=report.score)
            if report.score > best_score:
                best_score, best_state = report.score, model.state_dict()
        history.append(record)
        log.info("epoch %d %s", epoch + 1, record)
    if best_state is None:
        best_state = model.state_dict()
    return history, best_state


def domain_probe_accuracy(model, train, test, seed=0, steps=300, lr=1e-2):
    """Held-out accuracy of a fresh discriminator trained on frozen embeddings.

    Measures how separable real and synthetic samples remain in the
    encoder's feature space, independent of the discriminator head that took
    part in training.
    """
    e_train = embed(model, train.features)
    e_test = embed(model, test.features)
    mu, sd = e_train.mean(0), e_train.std(0) + 1e-6
    e_train, e_test = (e_train - mu) / sd, (e_test - mu) / sd
    rng = np.random.default_rng(seed)
    probe = DomainHead(e_train.shape[1], 2, rng)
    opt = Adam(probe.named_parameters(), lr=lr)
    x = Tensor(e_train)
    for _ in range(steps):
        opt.zero_grad()
        T.cross_entropy(probe(x), train.domains).backward()
        opt.step()
    with no_grad():
        pred = probe(Tensor(e_test)).data.argmax(1)
    return 100.0 * float((pred == test.domains).mean())
