"""scikit-learn style classifier over integer token sequences."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .encoder import Model, ModelConfig
from .trainer import Dataset, TrainConfig, train


def _check_tokens(X):
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.mod(X, 1) == 0):
            raise ValueError("X must hold integer token ids")
        X = X.astype(np.int64)
    if np.any(X < 0):
        raise ValueError("token ids must be non-negative")
    return X


class LTransformerClassifier(ClassifierMixin, BaseEstimator):
    """L-Transformer encoder classifier.

    ``X`` is an ``(n_samples, T)`` array of token ids. Positions equal to
    ``pad_token`` (when set) are masked out of attention and pooling.
    ``vocab=None`` sizes the embedding from the largest id seen in ``fit``.
    """

    def __init__(self, d=16, p=4, layers=1, heads=4, pe="linear", activation="gelu", transform="dct",
                 vocab=None, lr_peak=3e-4, weight_decay=0.01, warmup_frac=0.1, lr_floor=1e-5,
                 clip_norm=1.0, epochs=20, batch=32, seed=0, pad_token=None, execution="batched"):
        self.d = d
        self.p = p
        self.layers = layers
        self.heads = heads
        self.pe = pe
        self.activation = activation
        self.transform = transform
        self.vocab = vocab
        self.lr_peak = lr_peak
        self.weight_decay = weight_decay
        self.warmup_frac = warmup_frac
        self.lr_floor = lr_floor
        self.clip_norm = clip_norm
        self.epochs = epochs
        self.batch = batch
        self.seed = seed
        self.pad_token = pad_token
        self.execution = execution

    def _mask(self, X):
        if self.pad_token is None:
            return np.ones(X.shape, dtype=bool)
        mask = X != self.pad_token
        if not mask.any(axis=1).all():
            raise ValueError("every sequence needs at least one non-padding token")
        if np.any(mask[:, 1:] & ~mask[:, :-1]):
            raise ValueError("padding tokens must be trailing")
        return mask

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=None)
        X = _check_tokens(X)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        vocab = self.vocab if self.vocab is not None else int(X.max()) + 1
        cfg = ModelConfig(T=X.shape[1], d=self.d, p=self.p, layers=self.layers, heads=self.heads,
                          vocab=vocab, num_classes=max(len(self.classes_), 2), pe=self.pe,
                          activation=self.activation, transform=self.transform, seed=self.seed)
        tcfg = TrainConfig(lr_peak=self.lr_peak, weight_decay=self.weight_decay,
                           warmup_frac=self.warmup_frac, lr_floor=self.lr_floor, clip_norm=self.clip_norm,
                           epochs=self.epochs, batch=self.batch, seed=self.seed)
        mask = self._mask(X)
        # Dataset stores unpadded id lists; padding is rebuilt from the mask
        seqs = [(row[m].tolist(), int(label)) for row, m, label in zip(X, mask, y_idx)]
        self.model_, self.history_ = train(Model.init(cfg), Dataset(seqs, vocab, cfg.num_classes), tcfg,
                                           execution=self.execution)
        self.n_features_in_ = X.shape[1]
        return self

    def _logits(self, X):
        check_is_fitted(self, "model_")
        X = _check_tokens(check_array(X, dtype=None))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} positions, model was fitted with {self.n_features_in_}")
        if X.max() >= self.model_.config.vocab:
            raise ValueError(f"token id {X.max()} outside the fitted vocabulary")
        return self.model_.predict_logits(X, self._mask(X), execution=self.execution)

    def decision_function(self, X):
        return self._logits(X)

    def predict_proba(self, X):
        logits = self._logits(X)[:, :len(self.classes_)]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
