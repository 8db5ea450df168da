"""Training loop, curriculum driver and recognizer evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ctc, datagen, metrics
from .nn import CONV_BLOCK, CRNN, Adam, Checkpoint, ModelSpec

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step, seeds, loss):
        super().__init__(f"non-finite loss {loss} at step {step}; batch sample seeds {seeds}")
        self.step, self.seeds, self.loss = step, seeds, loss


@dataclass
class TrainSettings:
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment_ratio: float = 0.30
    clip_norm: float = 0.0


def batch_step(model: CRNN, opt: Adam, samples, atlas):
    batch, widths = datagen.make_batch([s.image for s in samples])
    labels = [atlas.encode(s.transcript) for s in samples]
    model.train()
    model.zero_grad()
    logp, lengths = model.forward(batch, widths)
    loss, grad = ctc.ctc_batch_loss(logp, lengths, labels)
    if not np.isfinite(loss):
        return loss
    model.backward(grad)
    opt.step(model.trainable_params())
    return loss


def train_steps(model, opt, generator, steps, batch_size=8, on_step=None):
    """Run ``steps`` optimizer steps on fresh generator batches; return the loss curve."""
    curve = []
    for step in range(steps):
        samples = generator.take(batch_size)
        loss = batch_step(model, opt, samples, generator.atlas)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, [s.seed for s in samples], loss)
        curve.append(float(loss))
        if on_step is not None:
            on_step(step, loss)
    return curve


def new_model(atlas, seed=0, width_div=1):
    return CRNN(ModelSpec(atlas.num_classes, datagen.GLYPH_HEIGHT, width_div), seed=seed)


@dataclass
class StageResult:
    stage: int
    max_words: int
    curve: list
    checkpoint: Checkpoint = field(repr=False, default=None)


def run_stage(ckpt: Checkpoint, atlas, stage, steps, settings: TrainSettings, data_seed,
              on_step=None) -> StageResult:
    """Train one curriculum stage in place on ``ckpt`` (data stream = stage)."""
    cs = datagen.curriculum(stage)
    model = ckpt.model
    if cs.freeze_conv:
        model.freeze(list(CONV_BLOCK))
    gen = datagen.LineGenerator(atlas, seed=data_seed, max_words=cs.max_words,
                                augment_ratio=settings.augment_ratio, split="train",
                                stream=stage)
    log.info("stage %d: max_words=%d frozen=%s steps=%d", stage, cs.max_words, model.frozen, steps)
    curve = train_steps(model, ckpt.optimizer, gen, steps, settings.batch_size, on_step)
    ckpt.stage = stage
    return StageResult(stage, cs.max_words, curve, ckpt)


def fresh_checkpoint(atlas, seed, settings: TrainSettings, width_div=1):
    model = new_model(atlas, seed, width_div)
    opt = Adam(settings.lr, settings.beta1, settings.beta2, settings.eps)
    meta = {"alphabet": atlas.chars, "atlas_seed": atlas.seed}
    return Checkpoint(model, opt, 0, seed, meta)


def run_curriculum(atlas, stage_steps, settings: TrainSettings, seed=0, width_div=1,
                   data_seed=None, on_stage=None):
    """Stages ``0..len(stage_steps)-1`` in order, conv block frozen after stage 0."""
    ckpt = fresh_checkpoint(atlas, seed, settings, width_div)
    data_seed = seed if data_seed is None else data_seed
    results = []
    for stage, steps in enumerate(stage_steps):
        res = run_stage(ckpt, atlas, stage, steps, settings, data_seed)
        results.append(res)
        if on_stage is not None:
            on_stage(res)
    return ckpt, results


def run_direct(atlas, max_words, steps, settings: TrainSettings, seed=0, width_div=1, data_seed=None):
    """Baseline: one unfrozen run straight at ``max_words``."""
    ckpt = fresh_checkpoint(atlas, seed, settings, width_div)
    data_seed = seed if data_seed is None else data_seed
    gen = datagen.LineGenerator(atlas, seed=data_seed, max_words=max_words,
                                augment_ratio=settings.augment_ratio, split="train")
    curve = train_steps(ckpt.model, ckpt.optimizer, gen, steps, settings.batch_size)
    return ckpt, curve


# -- inference -----------------------------------------------------------

def recognize(model: CRNN, atlas, images, decoder="greedy", beam_width=10, batch_size=16):
    """Decode line images to transcripts."""
    model.eval()
    out = []
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size]
        batch, widths = datagen.make_batch(chunk)
        logp, lengths = model.forward(batch, widths)
        for n in range(len(chunk)):
            lp = logp[n, :lengths[n]]
            if decoder == "greedy":
                labels = ctc.greedy_decode(lp)
            elif decoder == "beam":
                labels, _ = ctc.beam_decode(lp, beam_width)
            else:
                raise ValueError(f"unknown decoder {decoder!r}")
            out.append(_tidy(atlas.decode(labels)))
    model.train()
    return out


def _tidy(text):
    return " ".join(text.split())


def evaluate(model, atlas, samples, decoder="greedy", beam_width=10, metadata=None):
    hyps = recognize(model, atlas, [s.image for s in samples], decoder, beam_width)
    records = [(s.n_words, s.augment, s.transcript, h) for s, h in zip(samples, hyps)]
    return metrics.evaluate_transcripts(records, decoder, metadata)


def heldout(atlas, n, words, seed, mode="none", augment_ratio=0.30):
    """``n`` test-split lines with exactly ``words`` words.

    ``mode`` forces one augmentation on every line; ``None`` draws from the
    training policy at ``augment_ratio`` instead.
    """
    gen = datagen.LineGenerator(atlas, seed=seed, max_words=words, fixed_words=words,
                                split="test", force_augment=mode, augment_ratio=augment_ratio)
    return gen.take(n)
