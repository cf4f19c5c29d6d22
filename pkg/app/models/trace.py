"""
Forward-pass record exposed for analysis.
"""
from dataclasses import dataclass, field

import numpy as np

from app.core.exceptions import ModelException


@dataclass
class ForwardTrace:
    """
    Per-layer embeddings and attention of one batched forward pass.

    Embeddings are block outputs shaped (B, tokens, dim); attentions are
    shaped (B, heads, tokens, tokens). `visible_index` holds the encoder's
    token indices per batch item.
    """
    visible_index: np.ndarray
    encoder_embeddings: list[np.ndarray] = field(default_factory=list)
    encoder_attentions: list[np.ndarray] = field(default_factory=list)
    encoder_output: np.ndarray | None = None
    decoder_input: np.ndarray | None = None
    decoder_embeddings: list[np.ndarray] = field(default_factory=list)
    decoder_attentions: list[np.ndarray] = field(default_factory=list)
    reconstruction: np.ndarray | None = None

    def _layers(self, layers: list[np.ndarray], source: str, index: int) -> np.ndarray:
        if source not in ("encoder", "decoder"):
            raise ModelException(f"Unknown layer source: {source}")
        if not -len(layers) <= index < len(layers):
            raise ModelException(f"No {source} layer {index} in a trace of {len(layers)} layers")
        return layers[index]

    def layer_embeddings(self, source: str, index: int) -> np.ndarray:
        """Block output of an encoder or decoder layer; negative indices count from the end."""
        layers = self.encoder_embeddings if source == "encoder" else self.decoder_embeddings
        return self._layers(layers, source, index)

    def layer_attention(self, source: str, index: int) -> np.ndarray:
        layers = self.encoder_attentions if source == "encoder" else self.decoder_attentions
        return self._layers(layers, source, index)
