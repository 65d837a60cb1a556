"""scikit-learn style wrappers around mapping inference and ECC shuffling.

These let the two learnable steps sit in a ``Pipeline`` or be cloned and
grid-searched like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ecc import ShuffleLayout, apply_shuffle, correctable_fraction
from .harness import ErrorLog
from .mapping import estimate_row_mapping


class RowMappingEstimator(BaseEstimator, TransformerMixin):
    """Learn the row-address bit permutation from per-row error counts.

    ``fit`` takes counts indexed by external row (1-D, or a single column);
    ``transform``/``predict`` map external row addresses to internal ones.
    """

    def __init__(self, nbits=None, method="auto"):
        self.nbits = nbits
        self.method = method

    def fit(self, X, y=None):
        counts = check_array(np.asarray(X, dtype=np.float64).reshape(-1, 1),
                             ensure_min_samples=2, ensure_all_finite=True)
        est = estimate_row_mapping(counts[:, 0], self.nbits, self.method)
        self.estimate_ = est
        self.permutation_ = est.permutation
        self.confidence_ = est.confidence
        self.n_bits_ = est.nbits
        return self

    def predict(self, X):
        check_is_fitted(self, "permutation_")
        rows = np.asarray(X).ravel()
        if rows.size and (rows.min() < 0 or rows.max() >= 1 << self.n_bits_):
            raise ValueError(f"row addresses must lie in [0, {1 << self.n_bits_})")
        return np.asarray(self.estimate_.internal_index(rows.astype(np.int64)))

    def transform(self, X):
        return self.predict(X).reshape(-1, 1)

    def score(self, X, y=None):
        """Mean per-bit confidence of the fitted estimate (X is ignored)."""
        check_is_fitted(self, "confidence_")
        return float(np.mean(self.confidence_))


class DivaShuffler(BaseEstimator, TransformerMixin):
    """Remap error logs through a per-chip data-out permutation.

    ``layout`` is a name understood by :meth:`ShuffleLayout.named`
    (``identity``, ``rotate``, ``diva``) or a ``ShuffleLayout``.
    """

    def __init__(self, layout="diva", check_chip=False):
        self.layout = layout
        self.check_chip = check_chip

    def _resolve(self, log: ErrorLog) -> ShuffleLayout:
        if isinstance(self.layout, ShuffleLayout):
            return self.layout
        return ShuffleLayout.named(self.layout, min(log.chips, 8), log.beats)

    def fit(self, X: ErrorLog, y=None):
        if not isinstance(X, ErrorLog):
            raise TypeError(f"expected an ErrorLog, got {type(X).__name__}")
        self.layout_ = self._resolve(X)
        return self

    def transform(self, X: ErrorLog) -> ErrorLog:
        check_is_fitted(self, "layout_")
        return apply_shuffle(self.layout_, X)

    def score(self, X: ErrorLog, y=None) -> float:
        """Correctable fraction under the fitted layout (nan for an empty log)."""
        check_is_fitted(self, "layout_")
        frac = correctable_fraction(X, self.layout_, self.check_chip)
        return float("nan") if frac is None else frac
