"""Input validation helpers shared by the estimator and the training API."""

import numpy as np

from .errors import BadRequestError, EmptyDatasetError, LabelOutOfRangeError


def check_texts(X) -> list[str]:
    """Coerce X into a list of non-empty strings."""
    if isinstance(X, str):
        raise BadRequestError("X must be a sequence of strings, not a single string")
    texts = list(X)
    if not texts:
        raise EmptyDatasetError("X is empty")
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise BadRequestError(f"X[{i}] is {type(t).__name__}, expected str")
        if not t:
            raise BadRequestError(f"X[{i}] is empty; every example needs text")
    return texts


def check_labels(y, num_classes: int, n: int | None = None) -> np.ndarray:
    """Coerce y into an int64 vector of class indices below num_classes."""
    labels = np.asarray(y)
    if labels.ndim != 1:
        raise BadRequestError(f"y must be 1-D, got shape {labels.shape}")
    if n is not None and labels.shape[0] != n:
        raise BadRequestError(f"y has {labels.shape[0]} entries for {n} texts")
    if not np.issubdtype(labels.dtype, np.integer):
        rounded = labels.astype(np.int64)
        if not np.array_equal(rounded, labels):
            raise BadRequestError("y must contain integer class indices")
        labels = rounded
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelOutOfRangeError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels
