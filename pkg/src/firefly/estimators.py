"""scikit-learn compatible wrappers around progressive firefly growth."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted, validate_data

from .growth import GrowthConfig, Schedule, firefly_train
from .network import GrowableNetwork


class _FireflyBase(BaseEstimator):
    def __init__(self, initial_width=1, grow_phases=9, train_iters=1000, learning_rate=0.03,
                 step_size=0.05, m_prime=5, width_budget=1, step_one_iters=100,
                 step_one_lr=100.0, quadrature_points=3, init_scale=0.1, activation="rbf",
                 random_state=None):
        self.initial_width = initial_width
        self.grow_phases = grow_phases
        self.train_iters = train_iters
        self.learning_rate = learning_rate
        self.step_size = step_size
        self.m_prime = m_prime
        self.width_budget = width_budget
        self.step_one_iters = step_one_iters
        self.step_one_lr = step_one_lr
        self.quadrature_points = quadrature_points
        self.init_scale = init_scale
        self.activation = activation
        self.random_state = random_state

    def _seed(self):
        if self.random_state is None:
            return 0
        if isinstance(self.random_state, np.random.RandomState):
            return int(self.random_state.randint(2**31 - 1))
        return int(self.random_state)

    def _initial_network(self, n_features, n_outputs, head, seed):
        if self.initial_width < 1:
            raise ValueError("initial_width must be at least 1")
        rng = np.random.default_rng([seed, 1000])
        if self.activation == "rbf":
            if head != "regression":
                raise ValueError("the rbf activation supports regression only")
            return GrowableNetwork.rbf(rng.normal(0.0, 1.0, (self.initial_width, n_features + 1)),
                                       rng.normal(0.0, 1.0, (self.initial_width, n_outputs)))
        if self.activation != "relu":
            raise ValueError(f"unknown activation {self.activation!r}")
        return GrowableNetwork.mlp(n_features, [self.initial_width], n_outputs, head, rng=rng)

    def _grow(self, X, y, n_outputs, head):
        seed = self._seed()
        cfg = GrowthConfig(step_size=self.step_size, width_budget=self.width_budget,
                           m_prime=self.m_prime, quadrature_points=self.quadrature_points,
                           step_one_iters=self.step_one_iters, step_one_lr=self.step_one_lr,
                           init_scale=self.init_scale, rng_seed=seed)
        schedule = Schedule(self.train_iters, self.grow_phases, self.learning_rate)
        net = self._initial_network(X.shape[1], n_outputs, head, seed)
        self.network_, self.history_ = firefly_train(net, X, y, cfg, schedule)
        self.n_neurons_ = self.network_.count_neurons()
        return self


class FireflyRegressor(RegressorMixin, _FireflyBase):
    """Regressor that starts tiny and grows by firefly descent between training phases.

    Examples
    --------
    >>> import numpy as np
    >>> X = np.linspace(-2, 2, 50)[:, None]
    >>> reg = FireflyRegressor(grow_phases=2, train_iters=200, random_state=0)
    >>> reg.fit(X, np.sin(X[:, 0])).network_.count_neurons()
    3
    """

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True, multi_output=True, dtype=np.float64)
        self._multi = y.ndim == 2
        y2 = y.reshape(len(y), -1)
        return self._grow(X, y2, y2.shape[1], "regression")

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        out = self.network_.forward(X)
        return out if self._multi else out[:, 0]


class FireflyClassifier(ClassifierMixin, _FireflyBase):
    """Rectifier classifier grown by firefly descent (softmax cross-entropy head)."""

    def __init__(self, initial_width=2, grow_phases=4, train_iters=500, learning_rate=0.1,
                 step_size=0.05, m_prime=5, width_budget=2, step_one_iters=50,
                 step_one_lr=1.0, quadrature_points=3, init_scale=0.1, activation="relu",
                 random_state=None):
        super().__init__(initial_width, grow_phases, train_iters, learning_rate, step_size,
                         m_prime, width_budget, step_one_iters, step_one_lr, quadrature_points,
                         init_scale, activation, random_state)

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        return self._grow(X, self._encoder.transform(y), len(self.classes_), "classification")

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        z = self.network_.forward(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
