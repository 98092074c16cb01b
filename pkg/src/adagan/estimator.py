"""scikit-learn style wrappers around the GAN trainer and the two-sample probe."""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .engine.optim import Adam
from .engine.trainer import TrainConfig, Trainer
from .nn import Conv2d, Dense, Module
from .tensor import Rng, Tape, Tensor, leaky_relu, mean, mul, reshape, softplus
from .validation import check_binary_labels, check_images
from .zoo import build_models


class ProbeNet(Module):
    """Two strided convs and a linear head; input side must be a multiple of 4."""

    def __init__(self, side, channels, rng):
        c1, c2 = channels
        self.conv1 = Conv2d(3, c1, 4, 2, 1, rng)
        self.conv2 = Conv2d(c1, c2, 4, 2, 1, rng)
        self.head = Dense((side // 4) ** 2 * c2, 1, rng)

    def forward(self, x):
        h = leaky_relu(self.conv1(x), 0.2)
        h = leaky_relu(self.conv2(h), 0.2)
        return self.head(reshape(h, (x.shape[0], -1)))


class TwoSampleClassifier(ClassifierMixin, BaseEstimator):
    """Small conv net trained with logistic loss to tell two image sets apart.

    Labels are 0/1. Held-out accuracy near 0.5 means the sets are
    indistinguishable to this probe.
    """

    def __init__(self, channels=(16, 32), epochs=6, batch_size=50, learning_rate=1e-3, random_state=0):
        self.channels = channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y):
        X = check_images(X)
        y = check_binary_labels(y, len(X))
        if X.shape[1] % 4:
            raise ValueError(f"image side must be a multiple of 4, got {X.shape[1]}")
        rng = Rng(self.random_state)
        self.net_ = ProbeNet(X.shape[1], self.channels, rng)
        opt = Adam(self.net_, self.learning_rate, 0.9, 0.999)
        # BCE in logit form: softplus((1 - 2y) * logit)
        sign = (1.0 - 2.0 * y).astype(np.float32)[:, None]
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), self.batch_size):
                idx = order[start : start + self.batch_size]
                with Tape() as tape:
                    loss = mean(softplus(mul(self.net_(Tensor(X[idx])), Tensor(sign[idx]))))
                self.net_.zero_grad()
                tape.backward(loss)
                opt.step()
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        X = check_images(X)
        out = [self.net_(Tensor(X[i : i + 500])).data[:, 0] for i in range(0, len(X), 500)]
        return np.concatenate(out).astype(np.float64)

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)


class AdaGAN(BaseEstimator):
    """Fit a GAN generator to an image set and draw samples from it.

    ``arch`` uses the naming grammar of :mod:`adagan.zoo` ("Baseline",
    "AdaGAN-1-3x3", "AdaGAN-3x3", ...). Images must be (N, M, M, 3) in
    [-1, 1] with M divisible by 8.
    """

    def __init__(self, arch="AdaGAN-1-3x3", profile="tiny", n_iter=2000, batch_size=64,
                 learning_rate=2e-4, beta1=0.5, beta2=0.999, g_loss="non-saturating",
                 variant="separable", random_state=0):
        self.arch = arch
        self.profile = profile
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.g_loss = g_loss
        self.variant = variant
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_images(X)
        g, d = build_models(self.arch, self.profile, X.shape[1], self.random_state, self.variant)
        config = TrainConfig(
            total_iterations=self.n_iter, batch_size=self.batch_size, seed=self.random_state,
            lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2, g_loss=self.g_loss,
        )
        self.trainer_ = Trainer(g, d, config, Dataset(X, "array"))
        self.history_ = self.trainer_.run()
        self.generator_, self.discriminator_ = g, d
        return self

    def sample(self, n, random_state=None):
        """``n`` generator samples (eval-mode batch norm), shape (n, M, M, 3)."""
        check_is_fitted(self, "generator_")
        rng = Rng(self.random_state if random_state is None else random_state).spawn(7)
        return self.trainer_.sample(n, rng)
