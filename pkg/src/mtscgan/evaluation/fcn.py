"""Fully convolutional time-series classifier used as the MTS-FID feature extractor.

Three conv blocks (128/256/128 filters, kernels 8/5/3) with batch norm and
ReLU, global average pooling, linear head. Features are the pooled 128-vector.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import ShapeError, Tensor
from ..nn import Linear, Module, param
from ..optim import AdamState, adam_step

FILTERS = (128, 256, 128)
KERNELS = (8, 5, 3)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = param(np.ones((1, channels, 1)))
        self.beta = param(np.zeros((1, channels, 1)))
        self.running_mean = Tensor(np.zeros((1, channels, 1)))
        self.running_var = Tensor(np.ones((1, channels, 1)))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor, train: bool) -> Tensor:
        if train:
            mu = ad.mean(x, axis=(0, 2), keepdims=True)
            centered = x - mu
            var = ad.mean(ad.square(centered), axis=(0, 2), keepdims=True)
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mu.data
            self.running_var.data = (1 - m) * self.running_var.data + m * var.data
            xhat = centered * ad.power(var + self.eps, -0.5)
        else:
            xhat = (x - self.running_mean) * (1.0 / np.sqrt(self.running_var.data + self.eps))
        return xhat * self.gamma + self.beta


class ConvBlock(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(c_in * kernel)
        self.weight = param(rng.uniform(-bound, bound, (c_out, c_in, kernel)))
        self.bias = param(np.zeros(c_out))
        self.bn = BatchNorm1d(c_out)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return ad.relu(self.bn(ad.conv1d(x, self.weight, self.bias), train))


class FcnClassifier(Module):
    def __init__(self, in_channels: int, n_classes: int, rng: np.random.Generator,
                 filters=FILTERS, kernels=KERNELS):
        self.in_channels = in_channels
        self.n_classes = n_classes
        chans = (in_channels,) + tuple(filters)
        self.blocks = [ConvBlock(chans[i], chans[i + 1], k, rng) for i, k in enumerate(kernels)]
        self.head = Linear(chans[-1], n_classes, rng)

    @property
    def feature_dim(self) -> int:
        return self.head.weight.shape[0]

    def features(self, x, train: bool = False) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"fcn: expected [batch, {self.in_channels}, timesteps], got {x.shape}")
        for block in self.blocks:
            x = block(x, train)
        return ad.mean(x, axis=2)

    def forward(self, x, train: bool = False) -> Tensor:
        return self.head(self.features(x, train))

    def predict(self, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
        with ad.no_grad():
            return np.concatenate([self(x[i:i + batch_size]).data.argmax(axis=1)
                                   for i in range(0, len(x), batch_size)])


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.eye(logits.shape[1])[labels]
    return -ad.mean(ad.sum_(ad.log_softmax(logits) * onehot, axis=1))


def extract_features(x, model: FcnClassifier, batch_size: int = 128) -> np.ndarray:
    """Pooled pre-head features in inference mode, [batch, feature_dim]."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != model.in_channels:
        raise ShapeError(f"extract_features: extractor expects {model.in_channels} channels, got shape {x.shape}")
    with ad.no_grad():
        return np.concatenate([model.features(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)])


def accuracy(model: FcnClassifier, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(model.predict(x) == y)) if len(y) else 0.0


def train_fcn(train, val, epochs: int, rng: np.random.Generator, lr: float = 1e-3,
              batch_size: int = 32, filters=FILTERS, kernels=KERNELS, log=None) -> FcnClassifier:
    """Cross-entropy training with Adam; returns the weights with best validation accuracy."""
    if train.n_classes < 2:
        raise ValueError("classifier training needs at least two classes")
    model = FcnClassifier(train.channels, train.n_classes, rng, filters, kernels)
    params = model.parameters()
    state = AdamState.create(params, lr=lr, betas=(0.9, 0.999))
    best_acc, best_state = -1.0, model.state_dict()
    x, y = train.values, train.labels
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(x))
        losses = []
        for i in range(0, len(x), batch_size):
            idx = perm[i:i + batch_size]
            loss = cross_entropy(model(x[idx], train=True), y[idx])
            adam_step(params, ad.grad(loss, params), state)
            losses.append(loss.item())
        acc = accuracy(model, val.values, val.labels)
        if log:
            log(epoch, float(np.mean(losses)), acc)
        if acc > best_acc:
            best_acc, best_state = acc, model.state_dict()
        if best_acc >= 1.0:
            break
    model.load_state_dict(best_state)
    model.val_accuracy = best_acc
    return model
