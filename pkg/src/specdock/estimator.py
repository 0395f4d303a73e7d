"""Scikit-learn face of the spec engine.

SpecificationVectorizer is a classifier whose fitted state doubles as a
task fingerprint: fit(texts, labels) trains the adapter's B factors on the
shared anchor, predict() classifies through the adapted model, and
`specification_` / `vector_` hold the flattened result ready for submission
or identification. Because it follows the estimator protocol (get_params /
set_params / clone), it drops into pipelines and model-selection tooling.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .anchor import AnchorConfig, EncodedDataset, LabeledExample, init_anchor, tokenize
from .specgen import GroundTruth, ModelLabeler, preset, spec_from_adapter, train_adapter
from .validation import check_labels, check_texts


class SpecificationVectorizer(BaseEstimator, ClassifierMixin):
    """Fit a low-rank task fingerprint on the shared anchor model.

    Parameters mirror the anchor recipe plus the training preset; any
    preset field can be overridden individually. With labeler=None the
    estimator fits the given labels (user mode); with a callable labeler
    it fits the labeler's outputs instead (developer mode) and y may be
    omitted.
    """

    def __init__(
        self,
        vocab_size=257,
        embed_dim=64,
        max_len=64,
        num_classes=4,
        rank=16,
        lora_alpha=32.0,
        base_seed=42,
        lora_seed=4242,
        preset_name="toy",
        steps=None,
        batch_size=None,
        peak_lr=None,
        l1_decay=None,
        l2_decay=None,
        shuffle_seed=0,
        labeler=None,
        mode=None,
    ):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.max_len = max_len
        self.num_classes = num_classes
        self.rank = rank
        self.lora_alpha = lora_alpha
        self.base_seed = base_seed
        self.lora_seed = lora_seed
        self.preset_name = preset_name
        self.steps = steps
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.l1_decay = l1_decay
        self.l2_decay = l2_decay
        self.shuffle_seed = shuffle_seed
        self.labeler = labeler
        self.mode = mode

    def _anchor_config(self) -> AnchorConfig:
        return AnchorConfig(
            vocab_size=self.vocab_size,
            embed_dim=self.embed_dim,
            max_len=self.max_len,
            num_classes=self.num_classes,
            rank=self.rank,
            lora_alpha=self.lora_alpha,
            base_seed=self.base_seed,
            lora_seed=self.lora_seed,
        )

    def _train_config(self):
        overrides = {"shuffle_seed": self.shuffle_seed}
        for name in ("steps", "batch_size", "peak_lr", "l1_decay", "l2_decay"):
            value = getattr(self, name)
            if value is not None:
                overrides[name] = value
        return preset(self.preset_name, **overrides)

    def fit(self, X, y=None):
        texts = check_texts(X)
        if self.labeler is None:
            if y is None:
                raise ValueError("y is required when no labeler is given")
            labels = check_labels(y, self.num_classes, n=len(texts))
            source = GroundTruth()
        else:
            source = ModelLabeler(self.labeler)
            labels = (
                check_labels(y, self.num_classes, n=len(texts))
                if y is not None
                else np.zeros(len(texts), dtype=np.int64)
            )
        dataset = [LabeledExample(t, int(l)) for t, l in zip(texts, labels)]

        self.anchor_ = init_anchor(self._anchor_config())
        self.adapter_, self.train_stats_ = train_adapter(
            self.anchor_, dataset, source, self._train_config()
        )
        self.specification_ = spec_from_adapter(
            self.adapter_, mode=self.mode if self.mode is not None else source.mode
        )
        self.vector_ = self.specification_.vector
        self.classes_ = np.arange(self.num_classes)
        return self

    def _check_fitted(self):
        if not hasattr(self, "adapter_"):
            raise NotFittedError("call fit before using this estimator")

    def predict(self, X):
        self._check_fitted()
        texts = check_texts(X)
        seqs = [tokenize(t, self.max_len) for t in texts]
        enc = EncodedDataset(self.anchor_, seqs)
        return np.argmax(enc.logits(self.adapter_), axis=1)

    def decision_function(self, X):
        self._check_fitted()
        texts = check_texts(X)
        seqs = [tokenize(t, self.max_len) for t in texts]
        return EncodedDataset(self.anchor_, seqs).logits(self.adapter_)
