"""scikit-learn wrapper around the flat-vector MLP.

Lets the same model the federated rounds train be dropped into sklearn
pipelines, cross-validation and grid search for centralized baselines.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from . import model as mlp


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """Centralized SGD training of the simulator's MLP.

    Parameters
    ----------
    hidden_dims : tuple of int
        Hidden layer widths; ``()`` gives softmax regression.
    epochs, batch_size, learning_rate
        Plain mini-batch SGD settings.
    random_state : int
        Seeds both initialization and per-epoch shuffling.
    """

    def __init__(self, hidden_dims=(16,), epochs=20, batch_size=32, learning_rate=0.1, random_state=0):
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        # A single-class target still gets two outputs so softmax stays defined.
        n_out = max(2, self.classes_.size)
        shapes = mlp.shapes_from_dims([X.shape[1], *self.hidden_dims, n_out])
        seed = int(self.random_state or 0)
        self.model_ = mlp.init_model(shapes, seed)
        spec = mlp.TrainSpec(int(self.epochs), int(self.batch_size), float(self.learning_rate), seed)
        self.model_ = mlp.train_local(self.model_, X, encoded, spec)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return mlp.forward(self.model_, X)[:, : self.classes_.size]

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
