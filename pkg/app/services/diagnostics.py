"""
Relation diagnostics of a model over a set of images.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from app.core.config import AnalysisConfig
from app.core.exceptions import PartitionException, RelationException
from app.models.relations import DiagnosticsRecord, RelationMatrix
from app.models.tokens import MaskSpec
from app.models.trace import ForwardTrace
from app.services.exploitation import decoder_provenance, overall_rates
from app.services.mae import MaskedAutoencoder
from app.services.masking import random_mask
from app.services.partition import ncut_bipartition, similarity_graph
from app.services.relations import (
    aggregate_heads,
    attention_distance,
    cluster_edge_stats,
    feature_similarity_variance,
    fourier_log_amplitude,
    mask_token_variance,
    nmi_attention,
    relation_kld,
    similarity_matrix,
    token_grid,
)


logger = logging.getLogger(__name__)


@dataclass
class _Accumulator:
    """Per-metric lists of per-layer value lists, one entry per image."""
    values: dict[str, list[list[float]]] = field(default_factory=dict)
    curves: dict[int, list[np.ndarray]] = field(default_factory=dict)
    frequencies: list[float] = field(default_factory=list)

    def add(self, metric: str, layer: int, value: float) -> None:
        layers = self.values.setdefault(metric, [])
        while len(layers) <= layer:
            layers.append([])
        layers[layer].append(float(value))

    def means(self, metric: str) -> list[float]:
        layers = self.values.get(metric, [])
        if any(not v for v in layers):
            logger.warning(f"Metric {metric} has a layer without samples; dropping it")
            return []
        return [float(np.mean(v)) for v in layers]


class RelationAnalyzer:
    """
    Computes a DiagnosticsRecord for a model.

    Encoder metrics come from the intact-image pass. Decoder metrics come
    from a randomly masked pass whose masks are seeded per image.
    """

    def __init__(
        self,
        model: MaskedAutoencoder,
        config: AnalysisConfig | None = None,
        reference: MaskedAutoencoder | None = None,
        seed: int = 0,
        negative_similarity: str = "clip"
    ):
        self.model = model
        self.config = config or AnalysisConfig()
        self.reference = reference
        self.seed = seed
        self.negative_similarity = negative_similarity

    def _attention_views(self, attention: np.ndarray, layer: int, setting: str) -> list[RelationMatrix]:
        """Head-averaged attention, or one relation per head in per-head mode."""
        values = aggregate_heads(attention, self.config.head_mode)
        if self.config.head_mode == "mean":
            return [RelationMatrix(values, "attention", layer, setting)]
        return [RelationMatrix(head, "attention", layer, setting) for head in values]

    def _encoder_metrics(
        self,
        acc: _Accumulator,
        trace: ForwardTrace,
        item: int,
        reference: ForwardTrace | None
    ) -> None:
        patch_size = self.model.config.patch_size
        positions = self.model.positions
        for layer, (embeddings, attention) in enumerate(zip(trace.encoder_embeddings, trace.encoder_attentions)):
            x = np.asarray(embeddings[item], dtype=np.float64)
            sigma_f, sigma_s = feature_similarity_variance(x)
            acc.add("sigma_f", layer, sigma_f)
            acc.add("sigma_s", layer, sigma_s)

            views = self._attention_views(attention[item], layer, "intact-encoder")
            acc.add("nmi", layer, np.mean([nmi_attention(a) for a in views]))
            acc.add("attention_distance", layer, np.mean([attention_distance(a, positions, patch_size) for a in views]))

            frequencies, delta = fourier_log_amplitude(token_grid(x), self.config.fourier_eps)
            acc.curves.setdefault(layer, []).append(delta)
            acc.frequencies = frequencies.tolist()

            similarity = similarity_matrix(x, layer)
            try:
                partition = ncut_bipartition(similarity_graph(similarity, self.negative_similarity))
                stats = [cluster_edge_stats(a, partition.cluster_a, partition.cluster_b) for a in views]
                acc.add("mu_intra", layer, np.mean([s[0] for s in stats]))
                acc.add("mu_inter", layer, np.mean([s[1] for s in stats]))
            except (PartitionException, RelationException) as e:
                logger.warning(f"Skipping cluster edge stats for image {item}, layer {layer}: {e}")

            if reference is not None:
                ref_x = reference.encoder_embeddings[layer][item]
                ref_views = self._attention_views(reference.encoder_attentions[layer][item], layer, "intact-encoder")
                acc.add("kld_attention", layer, np.mean([relation_kld(a, r) for a, r in zip(views, ref_views)]))
                acc.add("kld_cosine", layer, relation_kld(similarity, similarity_matrix(ref_x, layer)))

    def _decoder_metrics(
        self,
        acc: _Accumulator,
        masked: ForwardTrace,
        intact: ForwardTrace,
        item: int,
        mask: MaskSpec
    ) -> None:
        for layer, variance in enumerate(mask_token_variance(masked, mask, item)):
            acc.add("mask_token_variance", layer, variance)

        attentions = [aggregate_heads(a[item]) for a in masked.decoder_attentions]
        for layer, state in enumerate(decoder_provenance(attentions, mask)):
            visible, mask_share = overall_rates(state, mask.masking_ratio)
            acc.add("exploitation_visible", layer, visible)
            acc.add("exploitation_mask", layer, mask_share)

        for layer, (now, ref) in enumerate(zip(masked.decoder_attentions, intact.decoder_attentions)):
            current = self._attention_views(now[item], layer, "masked-decoder")
            baseline = self._attention_views(ref[item], layer, "intact-decoder")
            acc.add("kld_decoder", layer, np.mean([relation_kld(a, r) for a, r in zip(current, baseline)]))

    def analyze(self, patches: np.ndarray, batch_size: int = 32) -> DiagnosticsRecord:
        """
        Average every diagnostic over the given images.

        Args:
            patches: Raw patches (N, n, p)
            batch_size: Images per forward pass

        Returns:
            Validated DiagnosticsRecord
        """
        n = self.model.num_tokens
        acc = _Accumulator()
        for start in range(0, patches.shape[0], batch_size):
            chunk = patches[start:start + batch_size]
            masks = [
                random_mask(n, self.config.mask_ratio, (self.seed, start + i))
                for i in range(chunk.shape[0])
            ]
            intact = self.model.trace_intact(chunk, with_decoder=True)
            _, masked = self.model.forward(chunk, masks)
            reference = self.reference.trace_intact(chunk) if self.reference is not None else None
            for i in range(chunk.shape[0]):
                self._encoder_metrics(acc, intact, i, reference)
                self._decoder_metrics(acc, masked, intact, i, masks[i])

        record = DiagnosticsRecord(
            sigma_f=acc.means("sigma_f"),
            sigma_s=acc.means("sigma_s"),
            kld_attention=acc.means("kld_attention"),
            kld_cosine=acc.means("kld_cosine"),
            kld_decoder=acc.means("kld_decoder"),
            nmi=acc.means("nmi"),
            attention_distance=acc.means("attention_distance"),
            mu_intra=acc.means("mu_intra"),
            mu_inter=acc.means("mu_inter"),
            mask_token_variance=acc.means("mask_token_variance"),
            exploitation_visible=acc.means("exploitation_visible"),
            exploitation_mask=acc.means("exploitation_mask"),
            fourier_frequencies=acc.frequencies,
            fourier_delta=[np.mean(acc.curves[layer], axis=0).tolist() for layer in sorted(acc.curves)],
        )
        record.validate()
        return record
