"""
Single-stage pre-training: random masking until the trigger epoch, then
self-guided informed masking without interrupting the run.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from app.core.config import ModelConfig, TrainConfig, thread_count
from app.core.exceptions import (
    DegenerateGraphException,
    EmptyDatasetException,
    ModelConfigException,
    RelationException,
    TrainingDivergedException,
)
from app.models.run import Checkpoint, EpochLog, RunRecord
from app.models.tokens import MaskSpec
from app.services.checkpoint import save_checkpoint
from app.services.diagnostics import RelationAnalyzer
from app.services.exploitation import decoder_provenance, overall_rates, trigger_check, trigger_rates
from app.services.mae import MaskedAutoencoder, patchify
from app.services.masking import (
    hint_ratio_for_epoch,
    hinted_random_mask,
    informed_mask,
    random_mask,
    target_for_epoch,
)
from app.services.optimizer import AdamW, cosine_lr
from app.services.relations import aggregate_heads
from app.utils.autograd import GradTape


logger = logging.getLogger(__name__)

# Seed streams per epoch
TRAIN_MASKS = 0
PROBE_MASKS = 1
SHUFFLE = 2
HINTS = 3
PROBE_SUBSET = 4


class Pretrainer:
    """
    Runs (or resumes) one pre-training job.

    Every random draw is seeded from (seed, epoch, stream, item), so a run
    resumed from a checkpoint at epoch e replays exactly the draws the
    uninterrupted run made from epoch e onward.
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        images: np.ndarray,
        output_dir: str | Path | None = None,
        analysis_subset: int = 16
    ):
        """
        Args:
            model_config: Model geometry
            train_config: Schedule and masking policy
            images: Training images (N, S, S, C) with values in [0, 1]
            output_dir: Directory for checkpoints and logs; None keeps everything in memory
            analysis_subset: Probe images used by diagnostics snapshots

        Raises:
            EmptyDatasetException: If there are no images
            ModelConfigException: If the images do not match the model geometry
        """
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[0] == 0:
            raise EmptyDatasetException("Pre-training needs a nonempty (N, S, S, C) image array")
        expected = (model_config.image_size, model_config.image_size, model_config.channels)
        if images.shape[1:] != expected:
            raise ModelConfigException(f"Images of shape {images.shape[1:]} do not match model input {expected}")

        self.model_config = model_config
        self.config = train_config
        self.model = MaskedAutoencoder(model_config, dtype=np.float32)
        self.optimizer = AdamW(
            self.model.params,
            weight_decay=train_config.weight_decay,
            betas=(train_config.beta1, train_config.beta2),
        )
        self.patches = patchify(images.astype(np.float32), model_config.patch_size)
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.record = RunRecord()
        self.start_epoch = 0
        self.analysis_subset = analysis_subset

        count = self.patches.shape[0]
        rng = np.random.default_rng((train_config.seed, 0, PROBE_SUBSET))
        self.probe_index = np.sort(rng.choice(count, size=min(train_config.probe_size, count), replace=False))
        self.steps_per_epoch = math.ceil(count / train_config.batch_size)
        self.total_steps = train_config.epochs * self.steps_per_epoch
        self.warmup_steps = train_config.warmup_epochs * self.steps_per_epoch

        self._apply_trigger_override()

    def _apply_trigger_override(self) -> None:
        config = self.config
        if config.trigger_epoch is None:
            return
        if config.mask_mode == "random":
            logger.warning(f"Ignoring trigger override {config.trigger_epoch}: mask mode is random")
            return
        self.record.trigger.trigger_epoch = config.trigger_epoch
        self.record.trigger_source = "override"

    @property
    def num_tokens(self) -> int:
        return self.model_config.num_tokens

    @property
    def trigger_epoch(self) -> Optional[int]:
        return self.record.trigger_epoch

    def restore(self, checkpoint: Checkpoint) -> None:
        """Continue from a checkpoint's weights, optimizer moments and record."""
        self.model.load_state_arrays(checkpoint.parameters)
        self.optimizer.load_state_arrays(checkpoint.optimizer_state, checkpoint.step_count)
        self.record = checkpoint.record
        self.start_epoch = checkpoint.epoch
        self._apply_trigger_override()
        logger.info(f"Resuming at epoch {self.start_epoch} (T = {self.trigger_epoch})")

    def checkpoint(self, epoch: int) -> Checkpoint:
        return Checkpoint(
            model_config=self.model_config,
            parameters={name: array.copy() for name, array in self.model.state_arrays().items()},
            optimizer_state={name: array.copy() for name, array in self.optimizer.state_arrays().items()},
            step_count=self.optimizer.step_count,
            epoch=epoch,
            record=RunRecord.from_dict(self.record.to_dict()),
            train_config=self.config.model_dump(),
        )

    def phase(self, epoch: int) -> str:
        if self.config.mask_mode == "self-guided" and self.trigger_epoch is not None and epoch >= self.trigger_epoch:
            return "informed"
        return "random"

    def random_masks(self, epoch: int, stream: int, items: np.ndarray) -> list[MaskSpec]:
        return [
            random_mask(self.num_tokens, self.config.masking_ratio, (self.config.seed, epoch, stream, int(i)))
            for i in items
        ]

    def measure_rates(self, epoch: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """
        Probe-subset means after the last decoder layer, using this epoch's random masks.

        Returns:
            ((R_{V->O}, R_{M->O}), the pair the trigger compares)
        """
        shares, compared = [], []
        for start in range(0, self.probe_index.size, self.config.batch_size):
            items = self.probe_index[start:start + self.config.batch_size]
            masks = self.random_masks(epoch, PROBE_MASKS, items)
            _, trace = self.model.forward(self.patches[items], masks)
            if not all(np.isfinite(layer).all() for layer in trace.decoder_attentions):
                raise TrainingDivergedException(
                    f"Decoder attention became non-finite before epoch {epoch}",
                    last_good_checkpoint=self._last_good_path(),
                )
            for row, mask in enumerate(masks):
                attentions = [aggregate_heads(layer[row]) for layer in trace.decoder_attentions]
                final = decoder_provenance(attentions, mask)[-1]
                rates = overall_rates(final, mask.masking_ratio)
                shares.append(rates)
                compared.append(trigger_rates(rates, mask.masking_ratio, self.config.trigger_statistic))
        share = np.mean(shares, axis=0)
        pair = np.mean(compared, axis=0)
        return (float(share[0]), float(share[1])), (float(pair[0]), float(pair[1]))

    def informed_masks(self, epoch: int) -> list[MaskSpec]:
        """
        Informed masks for every training image from the current weights.

        Mask-source embeddings come from an intact forward pass; the per-image
        partitioning runs on a thread pool. Images whose similarity graph is
        degenerate fall back to a random mask.
        """
        config = self.config
        hint_ratio = hint_ratio_for_epoch(config, epoch, self.trigger_epoch)
        target = target_for_epoch(config.target_cluster, epoch, self.trigger_epoch)
        with_decoder = config.mask_layer_source == "decoder"

        embeddings = []
        for start in range(0, self.patches.shape[0], config.batch_size):
            trace = self.model.trace_intact(self.patches[start:start + config.batch_size], with_decoder)
            embeddings.append(trace.layer_embeddings(config.mask_layer_source, config.mask_layer_index))
        embeddings = np.concatenate(embeddings, axis=0).astype(np.float64)

        def build(item: int) -> MaskSpec:
            try:
                return informed_mask(
                    embeddings[item],
                    config.masking_ratio,
                    hint_ratio,
                    config.hint_strategy,
                    (config.seed, epoch, HINTS, item),
                    target=target,
                    negative=config.negative_similarity,
                ).mask
            except (DegenerateGraphException, RelationException) as e:
                logger.warning(f"Image {item}: {e}; using a random mask")
                return hinted_random_mask(
                    self.num_tokens,
                    config.masking_ratio,
                    hint_ratio,
                    config.hint_strategy,
                    (config.seed, epoch, TRAIN_MASKS, item),
                    (config.seed, epoch, HINTS, item),
                )

        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            masks = list(pool.map(build, range(embeddings.shape[0])))
        logger.info(f"Epoch {epoch}: built {len(masks)} informed masks (target {target}, hint ratio {hint_ratio:.3f})")
        return masks

    def _last_good_path(self) -> Optional[str]:
        if self.output_dir is None:
            return None
        path = self.output_dir / "last.ckpt"
        return str(path) if path.exists() else None

    def train_epoch(self, epoch: int, masks: list[MaskSpec]) -> tuple[float, float]:
        """
        One pass over the shuffled training set.

        Returns:
            (mean loss weighted by batch size, learning rate of the last step)

        Raises:
            TrainingDivergedException: On a non-finite loss
        """
        config = self.config
        order = np.random.default_rng((config.seed, epoch, SHUFFLE)).permutation(self.patches.shape[0])
        total, seen, lr = 0.0, 0, config.learning_rate
        for start in range(0, order.size, config.batch_size):
            items = order[start:start + config.batch_size]
            with GradTape() as tape:
                loss, _ = self.model.forward_loss(self.patches[items], [masks[i] for i in items])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedException(
                    f"Loss became {value} at epoch {epoch}, step {self.optimizer.step_count}",
                    last_good_checkpoint=self._last_good_path(),
                )
            grads = tape.gradient(loss, self.model.params)
            lr = cosine_lr(
                self.optimizer.step_count,
                self.total_steps,
                self.warmup_steps,
                config.learning_rate,
                config.min_learning_rate,
            )
            self.optimizer.step(grads, lr)
            self.record.step_losses.append(value)
            logger.debug(f"epoch {epoch} step {self.optimizer.step_count}: loss {value:.6f}")
            total += value * items.size
            seen += items.size
        return total / seen, lr

    def snapshot(self, epoch: int) -> None:
        items = self.probe_index[:self.analysis_subset]
        analyzer = RelationAnalyzer(self.model, seed=self.config.seed, negative_similarity=self.config.negative_similarity)
        self.record.snapshots[epoch] = analyzer.analyze(self.patches[items], self.config.batch_size)

    def save(self, epoch: int, name: str) -> None:
        if self.output_dir is not None:
            save_checkpoint(self.checkpoint(epoch), self.output_dir / name)

    def run(self) -> tuple[RunRecord, Checkpoint]:
        """
        Train from `start_epoch` to the configured number of epochs.

        Returns:
            The run record and the final checkpoint
        """
        config = self.config
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)

        for epoch in range(self.start_epoch, config.epochs):
            rates = None
            if config.mask_mode == "random" or self.trigger_epoch is None:
                rates, compared = self.measure_rates(epoch)
                if config.mask_mode == "self-guided":
                    self.record.trigger.statistic = config.trigger_statistic
                    if epoch == 0:
                        # untrained baseline: recorded, never compared
                        self.record.trigger.append(epoch, *compared)
                    else:
                        trigger_check(self.record.trigger, epoch, compared)
                    if self.trigger_epoch == epoch:
                        self.record.trigger_source = "detected"

            phase = self.phase(epoch)
            if phase == "informed":
                masks = self.informed_masks(epoch)
                hint_ratio = hint_ratio_for_epoch(config, epoch, self.trigger_epoch)
                target = target_for_epoch(config.target_cluster, epoch, self.trigger_epoch)
            else:
                masks = self.random_masks(epoch, TRAIN_MASKS, np.arange(self.patches.shape[0]))
                hint_ratio, target = 0.0, None

            loss, lr = self.train_epoch(epoch, masks)
            self.record.epochs.append(EpochLog(
                epoch=epoch,
                loss=loss,
                phase=phase,
                learning_rate=lr,
                visible_rate=None if rates is None else rates[0],
                mask_rate=None if rates is None else rates[1],
                hint_ratio=hint_ratio,
                target=target,
            ))
            rate_text = "" if rates is None else f", R_V->O {rates[0]:.4f}, R_M->O {rates[1]:.4f}"
            logger.info(f"Epoch {epoch}: loss {loss:.5f}, phase {phase}{rate_text}")

            if config.diagnostics_every and (epoch + 1) % config.diagnostics_every == 0:
                self.snapshot(epoch)
            self.save(epoch + 1, "last.ckpt")
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                self.save(epoch + 1, f"epoch_{epoch + 1:04d}.ckpt")

        self.record.validate()
        final = self.checkpoint(config.epochs)
        if self.output_dir is not None:
            save_checkpoint(final, self.output_dir / "final.ckpt")
            self.record.to_csv(self.output_dir / "epochs.csv")
            self.record.trigger.to_csv(self.output_dir / "trigger.csv")
        return self.record, final


def run_pretraining(
    model_config: ModelConfig,
    train_config: TrainConfig,
    images: np.ndarray,
    output_dir: str | Path | None = None,
    resume: Checkpoint | None = None
) -> tuple[RunRecord, Checkpoint]:
    """
    Pre-train a masked autoencoder, switching to informed masks at the trigger epoch.

    Args:
        model_config: Model geometry
        train_config: Schedule and masking policy
        images: Training images (N, S, S, C) in [0, 1]
        output_dir: Where checkpoints and logs go (optional)
        resume: Checkpoint to continue from

    Returns:
        (RunRecord, final Checkpoint)
    """
    trainer = Pretrainer(model_config, train_config, images, output_dir)
    if resume is not None:
        trainer.restore(resume)
    return trainer.run()
