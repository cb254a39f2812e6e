"""
Test-Time Adaptation
Fine-tunes a pretrained harmonizer so its outputs on unlabeled target images
are likely under the frozen source flow.
"""

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import torch

from adaptation.stopping import StopDecision, stop_entropy, stop_fixed, stop_oracle_dice, stop_source_bpd
from analysis.segmentation_metrics import dice, prediction_entropy
from flows.flow_model import FlowModel
from harmonizer.network import HarmonizerNet
from numerics.optim import AdamState, adam_step
from numerics.tensor_ops import derive_seed, make_generator, to_batch
from utils.errors import ConfigError, NonFiniteGradientError

STOPPING_KINDS = ("source-bpd", "entropy", "oracle-dice", "fixed-steps")
TRACE_COLUMNS = ["epoch", "loss", "bpd", "entropy", "dice"]


@dataclass
class AdaptConfig:
    """
    Attributes:
        learning_rate: Adam learning rate (0 leaves the harmonizer unchanged)
        batch_size: Target images per step
        max_epochs: Upper bound on passes over the target set
        stopping: 'source-bpd', 'entropy', 'oracle-dice' or 'fixed-steps'
        fixed_epochs: Epoch count of the fixed-steps criterion
        bpd_tolerance: Match tolerance of source-bpd stopping
        entropy_patience: Epochs without a new entropy minimum before stopping
        source_bpd_reference: Source validation BPD recorded by flow training
        seed: Shuffling and dequantization-noise seed
    """

    learning_rate: float = 5e-7
    batch_size: int = 32
    max_epochs: int = 50
    stopping: str = "source-bpd"
    fixed_epochs: int = 0
    bpd_tolerance: float = 0.02
    entropy_patience: int = 3
    source_bpd_reference: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"adapt learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"adapt batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"adapt max-epochs must be >= 0, got {self.max_epochs}")
        if self.stopping not in STOPPING_KINDS:
            raise ConfigError(f"Unknown stopping criterion '{self.stopping}'. Available: {', '.join(STOPPING_KINDS)}")
        if self.stopping == "fixed-steps" and self.fixed_epochs < 0:
            raise ConfigError(f"fixed-steps needs a non-negative epoch count, got {self.fixed_epochs}")

    @staticmethod
    def parse_stopping(text: str):
        """'fixed-steps,N' -> ('fixed-steps', N); other names -> (name, 0)"""
        name, _, count = text.partition(",")
        name = name.strip()
        if name == "fixed-steps":
            if not count.strip():
                raise ConfigError("fixed-steps stopping needs an epoch count, e.g. 'fixed-steps,10'")
            try:
                return name, int(count)
            except ValueError:
                raise ConfigError(f"Invalid fixed-steps epoch count: '{count}'")
        if count:
            raise ConfigError(f"Stopping criterion '{name}' takes no argument")
        return name, 0

    @classmethod
    def from_run_config(cls, config, source_bpd_reference: Optional[float] = None) -> "AdaptConfig":
        stopping, fixed_epochs = cls.parse_stopping(config.adapt_stopping)
        return cls(
            learning_rate=config.adapt_lr,
            batch_size=config.adapt_batch,
            max_epochs=config.adapt_max_epochs,
            stopping=stopping,
            fixed_epochs=fixed_epochs,
            bpd_tolerance=config.adapt_bpd_tolerance,
            entropy_patience=config.adapt_entropy_patience,
            source_bpd_reference=source_bpd_reference,
            seed=config.seed
        )


@dataclass
class AdaptResult:
    harmonizer: HarmonizerNet
    trace: pd.DataFrame
    stop_epoch: int
    reached: bool
    reason: str


def adaptation_loss(
    harmonizer: HarmonizerNet,
    flow: FlowModel,
    batch: torch.Tensor,
    noise_seed: int
) -> torch.Tensor:
    """Sum of -log p(h(x)) over a target batch under the flow (nats)"""
    generator = make_generator(noise_seed)
    return -flow.log_prob(harmonizer(batch), generator=generator, discrete=False).sum()


@torch.no_grad()
def _evaluate_epoch(harmonizer, flow, images, masks, task_head, seed, batch_size) -> dict:
    loss, bpd_values, harmonized = 0.0, [], []
    for start in range(0, len(images), batch_size):
        batch = to_batch(images[start:start + batch_size])
        outputs = harmonizer(batch)
        generator = make_generator(derive_seed(seed, 31, start))
        log_p = flow.log_prob(outputs, generator=generator, discrete=False)
        loss += float(-log_p.sum().item())
        bpd_values.append((-log_p / (np.log(2.0) * flow.elements)).numpy())
        harmonized.append(outputs.clamp(0.0, 255.0).round().squeeze(1).numpy().astype(np.uint8))
    record = {"loss": loss, "bpd": float(np.mean(np.concatenate(bpd_values))),
              "entropy": float("nan"), "dice": float("nan")}
    harmonized = np.concatenate(harmonized)
    if task_head is not None:
        probabilities = task_head.predict_proba(harmonized)
        record["entropy"] = float(np.mean(prediction_entropy(probabilities)))
        if masks is not None:
            predictions = np.argmax(probabilities, axis=1)
            record["dice"] = float(np.mean([
                dice(p, m, task_head.class_count)[1] for p, m in zip(predictions, masks)
            ]))
    return record


def _decide(trace: pd.DataFrame, cfg: AdaptConfig) -> StopDecision:
    if cfg.stopping == "source-bpd":
        return stop_source_bpd(trace, cfg.source_bpd_reference, cfg.bpd_tolerance)
    if cfg.stopping == "entropy":
        return stop_entropy(trace, cfg.entropy_patience)
    if cfg.stopping == "oracle-dice":
        return stop_oracle_dice(trace)
    return stop_fixed(trace, cfg.fixed_epochs)


def adapt(
    harmonizer: HarmonizerNet,
    flow: FlowModel,
    target_images: np.ndarray,
    cfg: AdaptConfig,
    task_head=None,
    target_masks: Optional[np.ndarray] = None,
    verbose: bool = True
) -> AdaptResult:
    """
    Adapt the harmonizer to a target set under the frozen flow

    Every epoch is one shuffled pass over the target set; the trace is
    evaluated on the full set after each epoch (epoch 0 is the pretrained
    harmonizer). Only harmonizer parameters are updated.

    Args:
        harmonizer: Pretrained harmonizer (a copy is adapted)
        flow: Source flow; its parameters are never modified
        target_images: (M, H, W) uint8 unlabeled target images
        cfg: Adaptation settings
        task_head: Segmenter for entropy (and oracle Dice) tracking
        target_masks: Target labels, only for oracle-dice evaluation
        verbose: Print per-epoch lines

    Returns:
        AdaptResult with the harmonizer of the selected epoch and the trace
    """
    if cfg.stopping == "entropy" and task_head is None:
        raise ConfigError("entropy stopping needs a task head; use the source-bpd criterion instead")
    if cfg.stopping == "oracle-dice" and (task_head is None or target_masks is None):
        raise ConfigError("oracle-dice stopping needs a task head and target masks")
    if cfg.stopping == "source-bpd" and cfg.source_bpd_reference is None:
        raise ConfigError("source-bpd stopping needs the source BPD reference recorded by train-flow")

    target_images = np.asarray(target_images)
    harmonizer = copy.deepcopy(harmonizer)
    flow.eval()
    flow_flags = [param.requires_grad for param in flow.parameters()]
    for param in flow.parameters():
        param.requires_grad_(False)
    try:
        return _adapt_loop(harmonizer, flow, target_images, cfg, task_head, target_masks, verbose)
    finally:
        for param, flag in zip(flow.parameters(), flow_flags):
            param.requires_grad_(flag)


def _adapt_loop(harmonizer, flow, target_images, cfg, eval_head, eval_masks, verbose) -> AdaptResult:
    records = [{"epoch": 0, **_evaluate_epoch(harmonizer, flow, target_images, eval_masks, eval_head,
                                              cfg.seed, cfg.batch_size)}]
    states = {0: copy.deepcopy(harmonizer.state_dict())}
    decision = _decide(pd.DataFrame(records, columns=TRACE_COLUMNS), cfg)
    if verbose:
        print(f"  epoch {0:>3}  loss {records[0]['loss']:.2f}  bpd {records[0]['bpd']:.4f}")

    state = None
    if cfg.learning_rate > 0:
        state = AdamState.create(dict(harmonizer.named_parameters()), learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(derive_seed(cfg.seed, 32))
    epoch = 0
    while not decision.stop_now and epoch < cfg.max_epochs:
        epoch += 1
        order = rng.permutation(len(target_images))
        aborted = False
        for start in range(0, len(order), cfg.batch_size):
            batch = to_batch(target_images[order[start:start + cfg.batch_size]])
            loss = adaptation_loss(harmonizer, flow, batch, derive_seed(cfg.seed, 33, epoch, start))
            if not torch.isfinite(loss):
                aborted = True
                break
            if state is None:
                continue
            state.zero_grad()
            loss.backward()
            try:
                adam_step(dict(harmonizer.named_parameters()), state)
            except NonFiniteGradientError:
                aborted = True
                break
        if aborted:
            if verbose:
                print(f"⚠️  Adaptation loss became non-finite in epoch {epoch}; keeping the best epoch so far")
            break
        record = {"epoch": epoch, **_evaluate_epoch(harmonizer, flow, target_images, eval_masks, eval_head,
                                                    cfg.seed, cfg.batch_size)}
        if not np.isfinite(record["loss"]):
            if verbose:
                print(f"⚠️  Adaptation trace became non-finite at epoch {epoch}; keeping the best epoch so far")
            break
        records.append(record)
        states[epoch] = copy.deepcopy(harmonizer.state_dict())
        decision = _decide(pd.DataFrame(records, columns=TRACE_COLUMNS), cfg)
        # only the selected epoch and the latest one can still be returned
        states = {k: v for k, v in states.items() if k in (decision.epoch, epoch)}
        if verbose:
            extra = f"  entropy {record['entropy']:.4f}" if np.isfinite(record["entropy"]) else ""
            print(f"  epoch {epoch:>3}  loss {record['loss']:.2f}  bpd {record['bpd']:.4f}{extra}")

    trace = pd.DataFrame(records, columns=TRACE_COLUMNS)
    decision = _decide(trace, cfg)
    stop_epoch = decision.epoch
    if verbose and not decision.reached:
        print(f"⚠️  Stopping criterion '{cfg.stopping}' not reached ({decision.reason}); using epoch {stop_epoch}")
    harmonizer.load_state_dict(states[stop_epoch])
    return AdaptResult(harmonizer, trace, stop_epoch, decision.reached, decision.reason)
