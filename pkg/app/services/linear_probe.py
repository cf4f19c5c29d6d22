"""
Linear probing of frozen encoder features.
"""
import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from app.core.config import ProbeConfig
from app.core.exceptions import EmptyDatasetException, SingleClassDatasetException
from app.services.mae import MaskedAutoencoder, patchify


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeReport:
    accuracy: float
    num_classes: int
    train_size: int
    val_size: int
    majority_rate: float

    def to_dict(self) -> dict:
        return asdict(self)


def probe_features(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    config: ProbeConfig | None = None
) -> ProbeReport:
    """
    Fit a multinomial logistic-regression classifier and score it on held-out data.

    Args:
        train_features: (N, d) training features
        train_labels: (N,) integer class labels
        val_features: (M, d) held-out features
        val_labels: (M,) held-out labels
        config: Regularization and iteration budget

    Returns:
        ProbeReport with top-1 accuracy on the held-out split

    Raises:
        EmptyDatasetException: If either split is empty
        SingleClassDatasetException: If the training labels hold one class
    """
    config = config or ProbeConfig()
    train_labels = np.asarray(train_labels)
    val_labels = np.asarray(val_labels)
    if train_labels.size == 0 or val_labels.size == 0:
        raise EmptyDatasetException("Linear probing needs nonempty train and validation splits")
    classes, counts = np.unique(train_labels, return_counts=True)
    if classes.size < 2:
        raise SingleClassDatasetException(f"Training labels hold a single class ({classes[0]})")

    classifier = make_pipeline(
        StandardScaler(),
        LogisticRegression(C=config.regularization, max_iter=config.max_iter),
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        classifier.fit(np.asarray(train_features, dtype=np.float64), train_labels)
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        logger.warning(f"Logistic regression did not converge within {config.max_iter} iterations")

    accuracy = float(classifier.score(np.asarray(val_features, dtype=np.float64), val_labels))
    majority = classes[int(np.argmax(counts))]
    report = ProbeReport(
        accuracy=accuracy,
        num_classes=int(classes.size),
        train_size=int(train_labels.size),
        val_size=int(val_labels.size),
        majority_rate=float(np.mean(val_labels == majority)),
    )
    logger.info(f"Linear probe accuracy {accuracy:.4f} over {classes.size} classes")
    return report


def encoder_features(model: MaskedAutoencoder, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Mean-pooled final encoder embeddings of intact images; (N, d)."""
    patches = patchify(np.asarray(images, dtype=model.dtype), model.config.patch_size)
    chunks = [model.features(patches[s:s + batch_size]) for s in range(0, patches.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0).astype(np.float64)


def linear_probe(
    model: MaskedAutoencoder,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    val_images: np.ndarray,
    val_labels: np.ndarray,
    config: ProbeConfig | None = None
) -> ProbeReport:
    """Linear-probe accuracy of a frozen encoder."""
    if len(train_images) == 0 or len(val_images) == 0:
        raise EmptyDatasetException("Linear probing needs nonempty train and validation splits")
    return probe_features(
        encoder_features(model, train_images),
        train_labels,
        encoder_features(model, val_images),
        val_labels,
        config,
    )
