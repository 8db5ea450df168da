"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every key must appear in
``SCHEMA``; unknown keys, duplicates and out-of-range values are rejected
before any work starts.  The raw text is kept so a run can snapshot it
byte for byte.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from . import datagen, dbpost

OUT_ENV = "LINEOCR_OUT"


class ConfigError(ValueError):
    pass


def _int(lo=None, hi=None):
    def parse(s):
        v = int(s)
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ValueError(f"must lie in [{lo}, {hi}]")
        return v
    return parse


def _float(lo=None, hi=None, lo_open=False, hi_open=False):
    def parse(s):
        v = float(s)
        if v != v:
            raise ValueError("NaN not allowed")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ValueError(f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            raise ValueError(f"must be {'<' if hi_open else '<='} {hi}")
        return v
    return parse


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s
    return parse


def _int_list(lo, hi, max_len=None):
    def parse(s):
        vals = [int(x) for x in s.split(",") if x.strip()]
        if not vals:
            raise ValueError("empty list")
        if max_len is not None and len(vals) > max_len:
            raise ValueError(f"at most {max_len} entries")
        for v in vals:
            if not lo <= v <= hi:
                raise ValueError(f"entries must lie in [{lo}, {hi}]")
        return tuple(vals)
    return parse


def _modes(s):
    vals = tuple(x.strip() for x in s.split(",") if x.strip())
    bad = [v for v in vals if v not in datagen.AUGMENT_MODES]
    if not vals or bad:
        raise ValueError(f"modes must be drawn from {', '.join(datagen.AUGMENT_MODES)}")
    return vals


# key -> (parser, default, description)
SCHEMA = {
    "atlas_seed": (_int(0), 42, "glyph atlas seed"),
    "alphabet_size": (_int(2, len(datagen.CHARSET)), 10, "letters in the alphabet"),
    "data_seed": (_int(0), 0, "corpus seed"),
    "model_seed": (_int(0), 0, "weight initialization seed"),
    "width_div": (_int(1, 8), 1, "channel divisor for the recognizer (1, 2, 4 or 8)"),
    "stage_steps": (_int_list(0, 10**7, max_len=4), (2000,), "optimizer steps per curriculum stage"),
    "batch_size": (_int(1, 4096), 8, "lines per optimizer step"),
    "lr": (_float(0, 1, lo_open=True), 1e-3, "Adam learning rate"),
    "beta1": (_float(0, 1, hi_open=True), 0.9, "Adam first-moment decay"),
    "beta2": (_float(0, 1, hi_open=True), 0.999, "Adam second-moment decay"),
    "adam_eps": (_float(0, 1, lo_open=True), 1e-8, "Adam epsilon"),
    "augment_ratio": (_float(0, 1), 0.30, "fraction of augmented lines"),
    "max_words": (_int(1, 64), 1, "longest generated line for cmd gen"),
    "decoder": (_choice("greedy", "beam"), "greedy", "CTC decoder"),
    "beam_width": (_int(1, 1024), 10, "prefix beam width"),
    "eval_seed": (_int(0, datagen.N_STREAMS - 1), 0, "held-out stream (0-15) within the corpus seed"),
    "eval_count": (_int(1, 10**6), 100, "lines per (word count, mode) bucket"),
    "eval_words": (_int_list(1, 64), (1, 2, 4, 6), "word counts in the evaluation grid"),
    "eval_modes": (_modes, ("none", "salt", "bold"), "augmentation modes in the evaluation grid"),
    "db_k": (_float(0, None, lo_open=True), dbpost.K, "approximate binarization steepness"),
    "db_alpha": (_float(0), dbpost.ALPHA, "weight of the binary-map loss"),
    "db_beta": (_float(0), dbpost.BETA, "weight of the threshold loss"),
    "neg_ratio": (_float(0, None, lo_open=True), dbpost.NEG_RATIO, "hard negatives per positive"),
    "shrink_ratio": (_float(0, 1, lo_open=True, hi_open=True), dbpost.SHRINK_RATIO, "polygon shrink ratio"),
    "t_min": (_float(0, 1), dbpost.T_MIN, "threshold map floor"),
    "t_max": (_float(0, 1), dbpost.T_MAX, "threshold map ceiling"),
    "bin_thresh": (_float(0, 1, lo_open=True, hi_open=True), dbpost.BIN_THRESH, "map binarization threshold"),
    "box_score_thresh": (_float(0, 1), dbpost.BOX_SCORE_THRESH, "minimum mean map score per box"),
    "unclip_ratio": (_float(0, None, lo_open=True), dbpost.UNCLIP_RATIO, "outward offset ratio"),
    "iou_thresh": (_float(0, 1, lo_open=True, hi_open=True), 0.5, "detection match threshold"),
    "out_dir": (str, ".", "output root (overridden by $" + OUT_ENV + ")"),
}


@dataclass
class RunConfig:
    values: dict
    text: str = ""
    source: str | None = None
    explicit: set = field(default_factory=set)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def output_root(self) -> Path:
        return Path(os.environ.get(OUT_ENV) or self.values["out_dir"])

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.output_root() / p

    def train_settings(self):
        from .train import TrainSettings
        return TrainSettings(self.batch_size, self.lr, self.beta1, self.beta2, self.adam_eps,
                             self.augment_ratio)


def defaults() -> RunConfig:
    return RunConfig({k: v[1] for k, v in SCHEMA.items()})


def parse_config(text: str, source=None) -> RunConfig:
    values = {k: v[1] for k, v in SCHEMA.items()}
    seen = set()
    where = source or "<config>"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{where}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            values[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{where}:{lineno}: {key} = {value!r}: {exc}") from None
    if values["width_div"] not in (1, 2, 4, 8):
        raise ConfigError(f"{where}: width_div must be 1, 2, 4 or 8")
    if values["t_min"] >= values["t_max"]:
        raise ConfigError(f"{where}: t_min must be below t_max")
    return RunConfig(values, text, source, seen)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def render_defaults() -> str:
    """A commented config listing every key at its default."""
    lines = []
    for key, (_, default, doc) in SCHEMA.items():
        if isinstance(default, tuple):
            default = ",".join(str(x) for x in default)
        lines.append(f"# {doc}")
        lines.append(f"{key} = {default}")
    return "\n".join(lines) + "\n"
