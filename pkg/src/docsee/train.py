"""Loss combination, LR schedule, 1:1 dataset mixing, and the training loop.

All randomness derives from the config seed. Batch composition is a pure
function of (seed, draw index), so an interrupted run resumed from a
checkpoint replays exactly the batches it would have seen.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .errors import NumericalError
from .grounding import batched_see_loss
from .model import Model, lm_loss, save_checkpoint
from .tasks import GROUNDING_MODES, TrainingExample, build_examples

SEE_SUPERVISION_MODES = ("auxiliary_only", "auxiliary_and_downstream")


@dataclass
class TrainConfig:
    lam: float = 0.001  # see-loss weight
    lr: float = 3e-4  # desk-scale peak; the full-scale value 5e-5 stays available
    warmup_frac: float = 0.10
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    grounding_mode: str = "see_first"
    mix_ratio: str = "1:1"
    see_supervision: str = "auxiliary_and_downstream"
    tasks: tuple[str, ...] = ("vqa",)
    max_len: int = 256
    clip_norm: float = 1.0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("see-loss weight must be >= 0")
        if not 0 < self.warmup_frac < 1:
            raise ValueError("warmup fraction must lie in (0, 1)")
        if self.steps < 1:
            raise ValueError("need at least one training step")
        if self.grounding_mode not in GROUNDING_MODES:
            raise ValueError(f"unknown grounding mode {self.grounding_mode!r}")
        if self.see_supervision not in SEE_SUPERVISION_MODES:
            raise ValueError(f"unknown see-supervision mode {self.see_supervision!r}")
        if self.mix_ratio != "1:1":
            raise ValueError("only 1:1 mixing is supported")
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def total_loss(lm, see, lam: float):
    """Weighted sum lm + lam * see."""
    return lm + lam * see


def lr_schedule(step: float, total_steps: int, peak: float, warmup_frac: float = 0.10) -> float:
    """Linear 0 -> peak over the warmup fraction, then linear peak -> 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_frac * total_steps
    if step <= warmup:
        return peak * step / warmup
    return peak * (total_steps - step) / (total_steps - warmup)


class ExampleStream:
    """Infinite stream over a finite list; each cycle reshuffles deterministically."""

    def __init__(self, examples: list[TrainingExample], seed: int, tag: int = 0):
        if not examples:
            raise ValueError("example stream must be non-empty")
        self.examples = examples
        self.seed = seed
        self.tag = tag
        self._cycle = -1
        self._order: np.ndarray | None = None

    def at(self, t: int) -> TrainingExample:
        n = len(self.examples)
        cycle, offset = divmod(t, n)
        if cycle != self._cycle:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.tag, cycle]))
            self._order = rng.permutation(n)
            self._cycle = cycle
        return self.examples[int(self._order[offset])]

    def __iter__(self):
        t = 0
        while True:
            yield self.at(t)
            t += 1


class MixedStream:
    """Alternating draws from two streams: exact 1:1 long-run ratio."""

    def __init__(self, downstream: ExampleStream, auxiliary: ExampleStream):
        self.downstream = downstream
        self.auxiliary = auxiliary

    def at(self, t: int) -> TrainingExample:
        half, parity = divmod(t, 2)
        return self.downstream.at(half) if parity == 0 else self.auxiliary.at(half)

    def __iter__(self):
        t = 0
        while True:
            yield self.at(t)
            t += 1


def mix_datasets(
    downstream: list[TrainingExample],
    auxiliary: list[TrainingExample],
    seed: int,
    see_supervision: str = "auxiliary_and_downstream",
):
    """1:1 alternating stream; the shorter side cycles with reshuffles.

    Under auxiliary_only, downstream examples lose their see_targets before
    entering the stream (the <see> tokens themselves stay in the targets).
    """
    if see_supervision not in SEE_SUPERVISION_MODES:
        raise ValueError(f"unknown see-supervision mode {see_supervision!r}")
    if see_supervision == "auxiliary_only":
        downstream = [ex.without_see_supervision() for ex in downstream]
    return MixedStream(
        ExampleStream(downstream, seed, tag=0),
        ExampleStream(auxiliary, seed, tag=1),
    )


@dataclass
class TrainResult:
    steps_run: int
    metrics: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None


def _batch_tensors(model: Model, examples: list[TrainingExample], images: dict[str, torch.Tensor]):
    vocab = model.vocab
    seqs = [[vocab.bos_id] + ex.prompt_ids + ex.target_ids for ex in examples]
    t_max = max(len(s) for s in seqs)
    tokens = torch.full((len(seqs), t_max), vocab.pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), t_max - 1), dtype=torch.bool)
    see_rows, see_cols, see_bins = [], [], []
    for b, (ex, seq) in enumerate(zip(examples, seqs)):
        tokens[b, :len(seq)] = torch.tensor(seq, dtype=torch.long)
        start = 1 + len(ex.prompt_ids)  # seq index of the first target token
        mask[b, start - 1:start - 1 + len(ex.target_ids)] = True
        for tpos, quant in ex.see_targets:
            see_rows.append(b)
            see_cols.append(start + tpos)
            see_bins.append(list(quant.bins))
    imgs = torch.stack([images[ex.source] for ex in examples])
    return tokens, mask, imgs, see_rows, see_cols, see_bins


def train_step(model: Model, config: TrainConfig, examples, images):
    """One teacher-forced forward/backward pass; returns (total, lm, see|None)."""
    tokens, mask, imgs, see_rows, see_cols, see_bins = _batch_tensors(model, examples, images)
    memory = model.encode_batch(imgs)
    logits, hidden = model.decode_batch(memory, tokens)
    lm = lm_loss(logits[:, :-1], tokens[:, 1:], mask)
    see = None
    if see_rows:
        sel = hidden[torch.tensor(see_rows), torch.tensor(see_cols)]
        expected = model.grounding.expected(sel)
        see = batched_see_loss(
            expected,
            torch.tensor(see_bins, dtype=expected.dtype),
            torch.tensor(see_rows),
            num_samples=len(examples),
        )
    total = total_loss(lm, see, config.lam) if see is not None else lm
    return total, lm, see


def _optimizer_arrays(opt: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    arrays = {}
    for idx, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            arrays[f"opt.{idx}.{key}"] = np.asarray(
                value.detach().cpu().numpy() if torch.is_tensor(value) else value
            )
    return arrays


def _restore_optimizer(opt: torch.optim.Optimizer, extras: dict[str, np.ndarray]) -> None:
    state: dict[int, dict] = {}
    for key, arr in extras.items():
        if not key.startswith("opt."):
            continue
        _, idx, name = key.split(".", 2)
        state.setdefault(int(idx), {})[name] = torch.from_numpy(np.asarray(arr))
    if not state:
        return
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def train_loop(
    config: TrainConfig,
    model: Model,
    records,
    out_dir=None,
    start_step: int = 0,
    resume_extras: dict | None = None,
) -> TrainResult:
    """Teacher-forced training over the corpus; reproducible given the seed.

    Records tagged source="auxiliary" form the auxiliary stream; everything
    else is downstream. When both are present they mix 1:1.
    """
    torch.manual_seed(config.seed)
    downstream_records = [r for r in records if r.source != "auxiliary"]
    auxiliary_records = [r for r in records if r.source == "auxiliary"]
    if not downstream_records and not auxiliary_records:
        raise ValueError("corpus is empty")

    def examples_for(subset):
        return build_examples(
            model.vocab, subset, tasks=config.tasks,
            grounding_mode=config.grounding_mode, max_len=config.max_len,
        )

    if downstream_records and auxiliary_records:
        stream = mix_datasets(
            examples_for(downstream_records),
            examples_for(auxiliary_records),
            config.seed,
            config.see_supervision,
        )
    else:
        only = examples_for(downstream_records or auxiliary_records)
        if downstream_records and config.see_supervision == "auxiliary_only":
            only = [ex.without_see_supervision() for ex in only]
        stream = ExampleStream(only, config.seed, tag=0 if downstream_records else 1)

    images = {
        r.doc_id: torch.as_tensor(
            r.image.astype(np.float32) / 255.0
        ).unsqueeze(-1)
        for r in records
    }

    opt = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=config.betas, eps=config.eps
    )
    if resume_extras:
        _restore_optimizer(opt, resume_extras)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    metrics: list[dict] = []

    def flush(step: int) -> str | None:
        if out_path is None:
            return None
        ckpt = out_path / "checkpoint.npz"
        save_checkpoint(ckpt, model, step=step, extras=_optimizer_arrays(opt))
        return str(ckpt)

    checkpoint_path = None
    log_file = None
    if out_path is not None:
        log_file = open(out_path / "metrics.jsonl", "a" if start_step else "w",
                        encoding="utf-8")
    try:
        for step in range(start_step, config.steps):
            t0 = time.perf_counter()
            batch = [stream.at(t) for t in range(step * config.batch_size,
                                                 (step + 1) * config.batch_size)]
            total, lm, see = train_step(model, config, batch, images)
            if not torch.isfinite(total):
                raise NumericalError(
                    f"non-finite loss at step {step}: lm={float(lm)} "
                    f"see={None if see is None else float(see)} "
                    f"batch={[ex.source for ex in batch]}"
                )
            opt.zero_grad()
            total.backward()
            if config.clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            lr = lr_schedule(step, config.steps, config.lr, config.warmup_frac)
            for group in opt.param_groups:
                group["lr"] = lr
            opt.step()
            entry = {
                "step": step,
                "lm_loss": float(lm),
                "see_loss": None if see is None else float(see),
                "lr": lr,
                "wall_ms": (time.perf_counter() - t0) * 1000.0,
            }
            metrics.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                checkpoint_path = flush(step + 1)
        checkpoint_path = flush(config.steps) or checkpoint_path
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(steps_run=config.steps - start_step, metrics=metrics,
                       checkpoint_path=checkpoint_path)
