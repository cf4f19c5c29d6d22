"""
Token-relation matrices and the analysis metrics built on them.
"""
import math

import numpy as np

from app.core.exceptions import RelationException
from app.models.relations import RelationMatrix
from app.models.tokens import MaskSpec
from app.models.trace import ForwardTrace
from app.utils.numerics import dft2_amplitude, softmax_rows


NORM_TOLERANCE = 1e-12
LOG_FLOOR = 1e-300


def aggregate_heads(attention: np.ndarray, mode: str = "mean") -> np.ndarray:
    """
    Combine per-head attention (..., heads, n, n).

    Args:
        attention: Attention probabilities with the head axis third from the end
        mode: "mean" averages heads; "per_head" returns the input unchanged

    Returns:
        Head-averaged (..., n, n) array, or the per-head array
    """
    if mode == "mean":
        return np.asarray(attention, dtype=np.float64).mean(axis=-3)
    if mode == "per_head":
        return np.asarray(attention, dtype=np.float64)
    raise RelationException(f"Unknown head mode: {mode}")


def attention_matrix(
    x: np.ndarray,
    w_q: np.ndarray,
    w_k: np.ndarray,
    head_dim: int,
    head_mode: str = "mean",
    layer: int | None = None,
    setting: str = "intact-encoder"
) -> RelationMatrix | list[RelationMatrix]:
    """
    Attention scores Softmax(X W_Q (X W_K)^T / sqrt(d')).

    Projections wider than `head_dim` are split into heads of that width.

    Args:
        x: Token matrix (n, d)
        w_q: Query projection (d, heads * d')
        w_k: Key projection (d, heads * d')
        head_dim: d', the per-head width used for scaling
        head_mode: "mean" for one head-averaged matrix, "per_head" for a list

    Raises:
        RelationException: If d' <= 0 or shapes disagree
    """
    if head_dim <= 0:
        raise RelationException(f"Head dimension must be positive, got {head_dim}")
    x = np.asarray(x, dtype=np.float64)
    q = x @ np.asarray(w_q, dtype=np.float64)
    k = x @ np.asarray(w_k, dtype=np.float64)
    if q.shape != k.shape or q.shape[1] % head_dim:
        raise RelationException(
            f"Projections {q.shape} / {k.shape} do not split into heads of width {head_dim}"
        )
    heads = q.shape[1] // head_dim
    n = x.shape[0]
    q = q.reshape(n, heads, head_dim).transpose(1, 0, 2)
    k = k.reshape(n, heads, head_dim).transpose(1, 0, 2)
    probs = softmax_rows(q @ k.transpose(0, 2, 1) / math.sqrt(head_dim))
    if head_mode == "per_head":
        return [RelationMatrix(p, "attention", layer, setting) for p in probs]
    return RelationMatrix(aggregate_heads(probs, head_mode), "attention", layer, setting)


def similarity_matrix(
    embeddings: np.ndarray,
    layer: int | None = None,
    setting: str = "intact-encoder"
) -> RelationMatrix:
    """
    Cosine similarity M_ij between contextualized token embeddings.

    Raises:
        RelationException: If an embedding has zero norm (the token index is reported)
    """
    x = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms <= NORM_TOLERANCE):
        raise RelationException(f"Zero-norm embedding at token {int(np.argmin(norms))}")
    unit = x / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return RelationMatrix(sim, "cosine", layer, setting)


def feature_similarity_variance(embeddings: np.ndarray) -> tuple[float, float]:
    """
    Feature variance sigma_F and similarity variance sigma_S.

    sigma_F is the mean squared L2 deviation of the normalized embeddings from
    their mean; sigma_S is the variance of the off-diagonal cosine entries.

    Raises:
        RelationException: If fewer than 2 embeddings are given
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise RelationException("Need at least 2 embeddings for variance")
    unit = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), NORM_TOLERANCE)
    centered = unit - unit.mean(axis=0, keepdims=True)
    sigma_f = float((centered ** 2).sum(axis=1).mean())

    sim = similarity_matrix(x).values
    off_diagonal = sim[~np.eye(n, dtype=bool)]
    sigma_s = float(((off_diagonal - off_diagonal.mean()) ** 2).sum() / (n * (n - 1)))
    return sigma_f, sigma_s


def _row_distributions(relation: RelationMatrix) -> np.ndarray:
    if relation.kind == "cosine":
        return softmax_rows(relation.values)
    return relation.values


def relation_kld(current: RelationMatrix, reference: RelationMatrix) -> float:
    """
    Mean over rows of KL(current_row || reference_row), in nats.

    Cosine rows are turned into distributions with a row softmax first.

    Raises:
        RelationException: On kind or shape mismatch
    """
    if current.kind != reference.kind:
        raise RelationException(f"Cannot compare {current.kind} with {reference.kind} relations")
    if current.values.shape != reference.values.shape:
        raise RelationException(f"Shape mismatch: {current.values.shape} vs {reference.values.shape}")
    p = _row_distributions(current)
    q = _row_distributions(reference)
    support = p > 0
    terms = np.zeros_like(p)
    terms[support] = p[support] * (np.log(p[support]) - np.log(np.maximum(q[support], LOG_FLOOR)))
    return max(0.0, float(terms.sum(axis=1).mean()))


def _entropy(probabilities: np.ndarray) -> float:
    p = probabilities[probabilities > 0]
    return float(-(p * np.log(p)).sum())


def nmi_attention(relation: RelationMatrix) -> float:
    """
    Normalized mutual information between queries and keys.

    The joint is p(i, j) = A_ij / n with a uniform query marginal;
    NMI = I(q; k) / sqrt(H(q) H(k)), taken as 0 when either entropy vanishes.
    """
    if relation.kind != "attention":
        raise RelationException("NMI is defined on attention relations")
    a = relation.values
    n = a.shape[0]
    key_marginal = a.sum(axis=0) / n
    h_query = math.log(n)
    h_key = _entropy(key_marginal)
    if h_query <= 0 or h_key <= 0:
        return 0.0
    support = a > 0
    ratio = a[support] / np.broadcast_to(key_marginal, a.shape)[support]
    mutual = float((a[support] / n * np.log(ratio)).sum())
    return float(np.clip(mutual / math.sqrt(h_query * h_key), 0.0, 1.0))


def attention_distance(relation: RelationMatrix, positions: np.ndarray, patch_size: int) -> float:
    """Attention-weighted mean query-key distance, in pixels."""
    if relation.kind != "attention":
        raise RelationException("Attention distance is defined on attention relations")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape[0] != relation.size:
        raise RelationException(f"{pos.shape[0]} positions for {relation.size} tokens")
    diff = pos[:, None, :] - pos[None, :, :]
    distance = np.sqrt((diff ** 2).sum(axis=-1))
    return float((relation.values * distance).sum() * patch_size / relation.size)


def fourier_log_amplitude(grid: np.ndarray, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """
    Radially binned relative log amplitude of a feature grid.

    Bin 0 is the DC term (always 0); bins 1..ceil(max(h, w)/2) cover the
    normalized radial frequency (0, 1] in equal steps.

    Args:
        grid: Feature map (h, w, c)
        eps: Floor inside the logarithms

    Returns:
        (normalized frequencies, log(A(f) + eps) - log(A(0) + eps)) per bin
    """
    amplitude = dft2_amplitude(grid)
    h, w = amplitude.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(fy ** 2 + fx ** 2) / math.sqrt(0.5)
    bins = int(math.ceil(max(h, w) / 2))

    index = np.ceil(radius * bins - 1e-9).astype(np.int64)
    index = np.clip(index, 0, bins)
    index[0, 0] = 0

    dc = amplitude[0, 0]
    delta = np.zeros(bins + 1)
    for b in range(1, bins + 1):
        members = amplitude[index == b]
        mean = members.mean() if members.size else 0.0
        delta[b] = math.log(mean + eps) - math.log(dc + eps)
    frequencies = np.arange(bins + 1) / bins
    return frequencies, delta


def token_grid(embeddings: np.ndarray) -> np.ndarray:
    """Reshape (n, d) token embeddings into a square (g, g, d) feature grid."""
    n, d = embeddings.shape
    g = int(round(math.sqrt(n)))
    if g * g != n:
        raise RelationException(f"{n} tokens do not form a square grid")
    return np.asarray(embeddings).reshape(g, g, d)


def mask_token_variance(trace: ForwardTrace, mask: MaskSpec, item: int = 0) -> list[float]:
    """
    Per decoder layer, the variance across masked-slot embeddings.

    Variance is the mean over coordinates of the coordinate-wise population variance.

    Raises:
        RelationException: If fewer than 2 tokens are masked
    """
    if mask.masked.size < 2:
        raise RelationException("Need at least 2 masked tokens for mask-token variance")
    variances = []
    for layer in trace.decoder_embeddings:
        slots = np.asarray(layer[item], dtype=np.float64)[mask.masked]
        variances.append(float(slots.var(axis=0).mean()))
    return variances


def cluster_edge_stats(
    relation: RelationMatrix,
    cluster_a: np.ndarray,
    cluster_b: np.ndarray
) -> tuple[float, float]:
    """
    Mean intra-cluster (off-diagonal) and inter-cluster edge weights.

    Returns:
        (mu_intra, mu_inter)

    Raises:
        RelationException: If the clusters are empty, overlap, miss tokens,
            or both are singletons (no intra edge)
    """
    a = np.asarray(cluster_a, dtype=np.int64)
    b = np.asarray(cluster_b, dtype=np.int64)
    n = relation.size
    if a.size == 0 or b.size == 0:
        raise RelationException("Both clusters must be nonempty")
    if np.intersect1d(a, b).size or np.union1d(a, b).size != n:
        raise RelationException("Clusters must be disjoint and cover every token")
    values = relation.values
    intra_count = a.size * (a.size - 1) + b.size * (b.size - 1)
    if intra_count == 0:
        raise RelationException("Intra-cluster mean is undefined for singleton clusters")
    block_a = values[np.ix_(a, a)]
    block_b = values[np.ix_(b, b)]
    intra = (block_a.sum() - np.trace(block_a) + block_b.sum() - np.trace(block_b)) / intra_count
    inter = (values[np.ix_(a, b)].sum() + values[np.ix_(b, a)].sum()) / (2 * a.size * b.size)
    return float(intra), float(inter)
