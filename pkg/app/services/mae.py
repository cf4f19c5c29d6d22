"""
Miniature ViT-based masked autoencoder with an asymmetric encoder/decoder.
"""
import logging
from typing import Sequence

import numpy as np

from app.core.config import ModelConfig
from app.core.exceptions import MaskSpecException, ModelConfigException, PatchifyException
from app.models.tokens import MaskSpec, TokenSequence
from app.models.trace import ForwardTrace
from app.services.vit import (
    apply_linear,
    apply_norm,
    get_2d_sincos_pos_embed,
    init_block,
    init_linear,
    init_norm,
    transformer_block,
)
from app.utils.autograd import (
    Tensor,
    add,
    broadcast_to,
    concat,
    gather_tokens,
    mul,
    parameter,
    sub,
)


logger = logging.getLogger(__name__)

TARGET_EPS = 1e-6


def grid_positions(grid_size: int) -> np.ndarray:
    """Row-major (row, col) coordinates of a square patch grid; shape (grid_size**2, 2)."""
    rows, cols = np.divmod(np.arange(grid_size * grid_size), grid_size)
    return np.stack([rows, cols], axis=1)


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """
    Split square images into flattened P x P patches.

    Args:
        images: Array (h, w, c) or (B, h, w, c)
        patch_size: Patch side P

    Returns:
        Array (n, P*P*c) or (B, n, P*P*c); patch rows are row-major over the grid
        and each patch is flattened row-major over (row, col, channel)

    Raises:
        PatchifyException: If the image is not square or not divisible by P
    """
    x = np.asarray(images)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise PatchifyException(f"Expected (h, w, c) or (B, h, w, c) images, got {np.asarray(images).shape}")
    batch, height, width, channels = x.shape
    if height != width:
        raise PatchifyException(f"Images must be square, got {height} x {width}")
    if patch_size <= 0 or height % patch_size:
        raise PatchifyException(f"Image size {height} is not divisible by patch size {patch_size}")
    grid = height // patch_size
    patches = x.reshape(batch, grid, patch_size, grid, patch_size, channels)
    patches = patches.transpose(0, 1, 3, 2, 4, 5).reshape(batch, grid * grid, patch_size * patch_size * channels)
    return patches[0] if single else patches


def unpatchify(patches: np.ndarray, patch_size: int, channels: int) -> np.ndarray:
    """Inverse of `patchify`."""
    x = np.asarray(patches)
    single = x.ndim == 2
    if single:
        x = x[None]
    batch, tokens, _ = x.shape
    grid = int(round(np.sqrt(tokens)))
    if grid * grid != tokens:
        raise PatchifyException(f"{tokens} patches do not form a square grid")
    images = x.reshape(batch, grid, grid, patch_size, patch_size, channels)
    images = images.transpose(0, 1, 3, 2, 4, 5).reshape(batch, grid * patch_size, grid * patch_size, channels)
    return images[0] if single else images


def patchify_image(image: np.ndarray, patch_size: int) -> TokenSequence:
    """Raw patch matrix of one image with its grid positions."""
    values = patchify(image, patch_size)
    grid = image.shape[0] // patch_size
    return TokenSequence(values=values, positions=grid_positions(grid))


def normalize_targets(patches: np.ndarray) -> np.ndarray:
    """Per-patch normalization: subtract the patch mean, divide by patch std + 1e-6."""
    mean = patches.mean(axis=-1, keepdims=True)
    std = patches.std(axis=-1, keepdims=True)
    return (patches - mean) / (std + TARGET_EPS)


def mask_index_arrays(masks: Sequence[MaskSpec]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Batch index arrays for a list of masks.

    Returns:
        visible_index (B, nv), restore_index (B, n) and loss weight (B, n)
        with 1 on masked tokens

    Raises:
        MaskSpecException: If the masks disagree on token count or visible count
    """
    if not masks:
        raise MaskSpecException("Empty mask batch")
    n = masks[0].num_tokens
    nv = masks[0].visible.size
    for mask in masks:
        if mask.num_tokens != n or mask.visible.size != nv:
            raise MaskSpecException(
                "All masks in a batch need the same token and visible counts "
                f"(got {mask.num_tokens}/{mask.visible.size}, expected {n}/{nv})"
            )
    visible = np.stack([mask.visible for mask in masks])
    order = np.stack([np.concatenate([mask.visible, mask.masked]) for mask in masks])
    restore = np.argsort(order, axis=1, kind="stable")
    weight = np.zeros((len(masks), n))
    for row, mask in enumerate(masks):
        weight[row, mask.masked] = 1.0
    return visible, restore, weight


def reconstruction_loss(
    reconstruction: Tensor | np.ndarray,
    targets: np.ndarray,
    masks: MaskSpec | Sequence[MaskSpec]
) -> Tensor:
    """
    Mean squared error over masked token rows only.

    Visible tokens, hints included, carry no weight.

    Args:
        reconstruction: Predicted patches (n, p) or (B, n, p)
        targets: Target patches of the same shape
        masks: One MaskSpec, or one per batch item

    Returns:
        Scalar tensor

    Raises:
        MaskSpecException: If shapes disagree or no token is masked
    """
    recon = reconstruction if isinstance(reconstruction, Tensor) else Tensor(np.asarray(reconstruction))
    target = np.asarray(targets, dtype=recon.dtype)
    if isinstance(masks, MaskSpec):
        masks = [masks]
    if recon.shape != target.shape:
        raise MaskSpecException(f"Reconstruction {recon.shape} and target {target.shape} disagree")
    expected = 1 if recon.ndim == 2 else recon.shape[0]
    if len(masks) != expected:
        raise MaskSpecException(f"Got {len(masks)} masks for {expected} reconstructions")
    weight = np.zeros(recon.shape[:-1], dtype=recon.dtype).reshape(len(masks), -1)
    for row, mask in enumerate(masks):
        weight[row, mask.masked] = 1.0
    weight = weight.reshape(recon.shape[:-1])
    total = weight.sum()
    if total == 0:
        raise MaskSpecException("No masked token: reconstruction loss has no support")

    diff = sub(recon, target)
    per_token = mul(diff, diff).mean(axis=-1)
    return mul(per_token, weight).sum() * np.asarray(1.0 / total, dtype=recon.dtype)


def init_parameters(config: ModelConfig, dtype=np.float32) -> dict[str, Tensor]:
    """Xavier-initialized parameter registry for the whole autoencoder."""
    rng = np.random.default_rng(config.seed)
    d, dd = config.embed_dim, config.decoder_dim
    params: dict[str, Tensor] = {}
    params.update(init_linear(rng, "patch_embed", config.patch_dim, d, dtype))
    for i in range(config.encoder_layers):
        params.update(init_block(rng, f"encoder.blocks.{i}", d, config.mlp_ratio, dtype))
    params.update(init_norm("encoder.norm", d, dtype))
    params.update(init_linear(rng, "decoder.embed", d, dd, dtype))
    params["decoder.mask_token"] = parameter(
        (rng.standard_normal((1, 1, dd)) * 0.02).astype(dtype), "decoder.mask_token"
    )
    for i in range(config.decoder_layers):
        params.update(init_block(rng, f"decoder.blocks.{i}", dd, config.mlp_ratio, dtype))
    params.update(init_norm("decoder.norm", dd, dtype))
    params.update(init_linear(rng, "decoder.pred", dd, config.patch_dim, dtype))
    return params


class MaskedAutoencoder:
    """Asymmetric MAE: the encoder sees visible tokens, the decoder all n slots."""

    def __init__(self, config: ModelConfig, dtype=np.float32) -> None:
        """
        Initialize parameters and fixed positional encodings.

        Args:
            config: Model geometry
            dtype: Parameter dtype (float32 for training, float64 for checks)
        """
        if config.image_size % config.patch_size:
            raise ModelConfigException("image_size must be divisible by patch_size")
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = init_parameters(config, self.dtype)
        self.pos_embed = get_2d_sincos_pos_embed(config.embed_dim, config.grid_size).astype(self.dtype)
        self.decoder_pos_embed = get_2d_sincos_pos_embed(config.decoder_dim, config.grid_size).astype(self.dtype)
        self.positions = grid_positions(config.grid_size)

    @property
    def num_tokens(self) -> int:
        return self.config.num_tokens

    def prepare_targets(self, patches: np.ndarray) -> np.ndarray:
        """Reconstruction targets, normalized per patch unless raw-pixel mode is configured."""
        patches = np.asarray(patches, dtype=self.dtype)
        return normalize_targets(patches) if self.config.norm_pix_loss else patches

    def embed(self, patches: np.ndarray) -> Tensor:
        """Patch embedding plus positional encoding for all n tokens; (B, n, d)."""
        x = apply_linear(Tensor(np.asarray(patches, dtype=self.dtype)), self.params, "patch_embed")
        return add(x, self.pos_embed)

    def encode(
        self,
        patches: np.ndarray,
        visible_index: np.ndarray | None = None,
        trace: ForwardTrace | None = None
    ) -> Tensor:
        """
        Run the encoder over the visible tokens.

        Args:
            patches: Raw patches (B, n, p)
            visible_index: Token indices per item (B, nv); None keeps every token.
                Positions are attached before selection, so any order is allowed.
            trace: Optional trace receiving per-layer embeddings and attention

        Returns:
            Normalized encoder output (B, nv, d)

        Raises:
            MaskSpecException: If no token is visible
        """
        batch = np.asarray(patches).shape[0]
        if visible_index is None:
            visible_index = np.broadcast_to(np.arange(self.num_tokens), (batch, self.num_tokens))
        visible_index = np.asarray(visible_index, dtype=np.int64)
        if visible_index.ndim != 2 or visible_index.shape[1] < 1:
            raise MaskSpecException("Encoder needs at least one visible token")

        x = gather_tokens(self.embed(patches), visible_index)
        if trace is not None:
            trace.visible_index = visible_index
        for i in range(self.config.encoder_layers):
            x, probs = transformer_block(x, self.params, f"encoder.blocks.{i}", self.config.heads)
            if trace is not None:
                trace.encoder_embeddings.append(x.data)
                trace.encoder_attentions.append(probs)
        x = apply_norm(x, self.params, "encoder.norm")
        if trace is not None:
            trace.encoder_output = x.data
        return x

    def decode(
        self,
        latent: Tensor,
        masks: Sequence[MaskSpec],
        trace: ForwardTrace | None = None
    ) -> Tensor:
        """
        Run the decoder over all n slots; masked slots start from the shared mask token.

        Args:
            latent: Encoder output aligned with each mask's sorted visible set (B, nv, d)
            masks: One MaskSpec per batch item
            trace: Optional trace receiving decoder layers and the reconstruction

        Returns:
            Reconstruction (B, n, P*P*c)
        """
        _, restore, _ = mask_index_arrays(masks)
        batch, visible_count = latent.shape[0], latent.shape[1]
        masked_count = self.num_tokens - visible_count
        if masks[0].visible.size != visible_count:
            raise MaskSpecException("Encoder output does not match the visible set")

        x = apply_linear(latent, self.params, "decoder.embed")
        if masked_count:
            tokens = broadcast_to(self.params["decoder.mask_token"], (batch, masked_count, self.config.decoder_dim))
            x = concat([x, tokens], axis=1)
        x = add(gather_tokens(x, restore), self.decoder_pos_embed)
        if trace is not None:
            trace.decoder_input = x.data
        for i in range(self.config.decoder_layers):
            x, probs = transformer_block(x, self.params, f"decoder.blocks.{i}", self.config.heads)
            if trace is not None:
                trace.decoder_embeddings.append(x.data)
                trace.decoder_attentions.append(probs)
        x = apply_linear(apply_norm(x, self.params, "decoder.norm"), self.params, "decoder.pred")
        if trace is not None:
            trace.reconstruction = x.data
        return x

    def forward(self, patches: np.ndarray, masks: Sequence[MaskSpec]) -> tuple[Tensor, ForwardTrace]:
        """Encode the visible tokens of each item and decode the full sequence."""
        visible, _, _ = mask_index_arrays(masks)
        trace = ForwardTrace(visible_index=visible)
        latent = self.encode(patches, visible, trace)
        return self.decode(latent, masks, trace), trace

    def forward_loss(
        self,
        patches: np.ndarray,
        masks: Sequence[MaskSpec]
    ) -> tuple[Tensor, ForwardTrace]:
        """Reconstruction loss on masked tokens plus the trace of the pass."""
        reconstruction, trace = self.forward(patches, masks)
        loss = reconstruction_loss(reconstruction, self.prepare_targets(patches), masks)
        return loss, trace

    def trace_intact(self, patches: np.ndarray, with_decoder: bool = False) -> ForwardTrace:
        """
        Forward pass on the complete token set (no masking).

        Args:
            patches: Raw patches (B, n, p)
            with_decoder: Also decode with masking ratio 0

        Returns:
            Trace with n x n attention in every recorded layer
        """
        batch = np.asarray(patches).shape[0]
        everything = np.broadcast_to(np.arange(self.num_tokens), (batch, self.num_tokens))
        trace = ForwardTrace(visible_index=everything)
        latent = self.encode(patches, everything, trace)
        if with_decoder:
            self.decode(latent, [MaskSpec.unmasked(self.num_tokens)] * batch, trace)
        return trace

    def features(self, patches: np.ndarray) -> np.ndarray:
        """Mean-pooled final encoder embeddings of intact images; (B, d)."""
        return self.trace_intact(patches).encoder_output.mean(axis=1)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """
        Replace parameter values in place.

        Raises:
            ModelConfigException: If names or shapes disagree with the registry
        """
        if set(arrays) != set(self.params):
            missing = sorted(set(self.params) - set(arrays))
            extra = sorted(set(arrays) - set(self.params))
            raise ModelConfigException(f"Parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, tensor in self.params.items():
            value = np.asarray(arrays[name])
            if value.shape != tensor.shape:
                raise ModelConfigException(f"Shape mismatch for {name}: {value.shape} vs {tensor.shape}")
            tensor.data = value.astype(self.dtype, copy=True)
