"""
Vision-transformer building blocks on the autograd tape.

Parameters live in a flat registry (name -> Tensor); every layer function
takes the registry plus a name prefix.
"""
import numpy as np

from app.utils.autograd import Tensor, gelu, layer_norm, linear, matmul, parameter, softmax


def get_1d_sincos_pos_embed(embed_dim: int, positions: np.ndarray) -> np.ndarray:
    """Sin-cos encoding of a 1-D position list; output (len(positions), embed_dim)."""
    omega = np.arange(embed_dim // 2, dtype=np.float64) / (embed_dim / 2.0)
    omega = 1.0 / 10000 ** omega
    angles = np.outer(positions.reshape(-1).astype(np.float64), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def get_2d_sincos_pos_embed(embed_dim: int, grid_size: int) -> np.ndarray:
    """Fixed 2-D sin-cos positions for a square grid, row-major; output (grid_size**2, embed_dim)."""
    rows, cols = np.meshgrid(np.arange(grid_size), np.arange(grid_size), indexing="ij")
    emb_rows = get_1d_sincos_pos_embed(embed_dim // 2, rows)
    emb_cols = get_1d_sincos_pos_embed(embed_dim // 2, cols)
    return np.concatenate([emb_rows, emb_cols], axis=1)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_linear(
    rng: np.random.Generator,
    name: str,
    fan_in: int,
    fan_out: int,
    dtype
) -> dict[str, Tensor]:
    return {
        f"{name}.weight": parameter(xavier_uniform(rng, fan_in, fan_out, dtype), f"{name}.weight"),
        f"{name}.bias": parameter(np.zeros(fan_out, dtype=dtype), f"{name}.bias"),
    }


def init_norm(name: str, dim: int, dtype) -> dict[str, Tensor]:
    return {
        f"{name}.weight": parameter(np.ones(dim, dtype=dtype), f"{name}.weight"),
        f"{name}.bias": parameter(np.zeros(dim, dtype=dtype), f"{name}.bias"),
    }


def init_block(
    rng: np.random.Generator,
    prefix: str,
    dim: int,
    mlp_ratio: float,
    dtype
) -> dict[str, Tensor]:
    """Parameters of one pre-norm transformer block."""
    hidden = int(round(dim * mlp_ratio))
    params: dict[str, Tensor] = {}
    params.update(init_norm(f"{prefix}.norm1", dim, dtype))
    for proj in ("q", "k", "v", "proj"):
        params.update(init_linear(rng, f"{prefix}.attn.{proj}", dim, dim, dtype))
    params.update(init_norm(f"{prefix}.norm2", dim, dtype))
    params.update(init_linear(rng, f"{prefix}.mlp.fc1", dim, hidden, dtype))
    params.update(init_linear(rng, f"{prefix}.mlp.fc2", hidden, dim, dtype))
    return params


def apply_linear(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return linear(x, params[f"{name}.weight"], params[f"{name}.bias"])


def apply_norm(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return layer_norm(x, params[f"{name}.weight"], params[f"{name}.bias"])


def attention(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    heads: int
) -> tuple[Tensor, np.ndarray]:
    """
    Multi-head self-attention.

    Args:
        x: Tensor of shape (B, N, D)
        params: Parameter registry
        prefix: Name prefix of the attention layer
        heads: Number of heads; D must be divisible by it

    Returns:
        Output tensor (B, N, D) and attention probabilities (B, heads, N, N)
    """
    batch, tokens, dim = x.shape
    head_dim = dim // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(batch, tokens, heads, head_dim).transpose(0, 2, 1, 3)

    q = split(apply_linear(x, params, f"{prefix}.q"))
    k = split(apply_linear(x, params, f"{prefix}.k"))
    v = split(apply_linear(x, params, f"{prefix}.v"))

    scale = np.asarray(1.0 / np.sqrt(head_dim), dtype=x.dtype)
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * scale
    probs = softmax(scores)
    mixed = matmul(probs, v).transpose(0, 2, 1, 3).reshape(batch, tokens, dim)
    return apply_linear(mixed, params, f"{prefix}.proj"), probs.data


def transformer_block(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    heads: int
) -> tuple[Tensor, np.ndarray]:
    """Pre-norm block: x + attn(norm(x)), then x + mlp(norm(x))."""
    attended, probs = attention(apply_norm(x, params, f"{prefix}.norm1"), params, f"{prefix}.attn", heads)
    x = x + attended
    hidden = gelu(apply_linear(apply_norm(x, params, f"{prefix}.norm2"), params, f"{prefix}.mlp.fc1"))
    x = x + apply_linear(hidden, params, f"{prefix}.mlp.fc2")
    return x, probs
