"""Synthetic right-to-left handwriting corpus.

A seeded procedural glyph atlas stands in for real fonts.  Words of 7-10
glyphs are joined cursively, words are joined right-to-left into lines, and
a seeded policy applies at most one augmentation per line.  Sentences come
from a keyed permutation of the sentence space whose indices are dealt out
to (stream, split) slots, so no stream repeats a transcript and no two
streams or splits of one corpus seed share one.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import imaging

GLYPH_HEIGHT = 32
BASELINE = 22
GLYPH_WIDTHS = (12, 20)
WORD_LENGTHS = (7, 10)
JOIN = 2
WORD_GAP = 10
MIN_SEPARATION = 0.10
AUGMENT_MODES = ("none", "salt", "bold", "rotate")
SPLITS = {"train": 0, "test": 1, "val": 2, "eval": 3}
N_STREAMS = 16

# 28 letters, then Arabic-Indic digits for larger alphabets
CHARSET = ("ابتثجحخدذرزسشصضطظعغفقكلمنهوي" "٠١٢٣٤٥٦٧٨٩")


class EpochExhausted(StopIteration):
    """Every sentence of some shape available to this stream has been emitted."""


def charset(alphabet_size):
    if not 2 <= alphabet_size <= len(CHARSET):
        raise ValueError(f"alphabet size must lie in [2, {len(CHARSET)}]")
    return CHARSET[:alphabet_size]


# -- glyph atlas ---------------------------------------------------------

@dataclass
class GlyphAtlas:
    seed: int
    glyphs: list  # uint8 [32, w] ink bitmaps

    @property
    def alphabet_size(self):
        return len(self.glyphs)

    @property
    def chars(self):
        return charset(self.alphabet_size)

    @property
    def num_classes(self):
        # symbols + word space + blank
        return self.alphabet_size + 2

    @property
    def space_id(self):
        return self.alphabet_size

    def encode(self, transcript):
        """Transcript -> CTC label sequence (space is a class)."""
        lookup = {c: i for i, c in enumerate(self.chars)}
        try:
            return [self.space_id if ch == " " else lookup[ch] for ch in transcript]
        except KeyError as exc:
            raise ValueError(f"symbol {exc} is not in the alphabet") from None

    def decode(self, labels):
        chars = self.chars
        return "".join(" " if c == self.space_id else chars[c] for c in labels)


def _stamp(canvas, xs, ys):
    H, W = canvas.shape
    xi = np.floor(xs).astype(int)
    yi = np.floor(ys).astype(int)
    for dy in (0, 1):
        for dx in (0, 1):
            r, c = yi + dy, xi + dx
            ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
            canvas[r[ok], c[ok]] = 1


def _draw_glyph(rng):
    w = int(rng.integers(GLYPH_WIDTHS[0], GLYPH_WIDTHS[1] + 1))
    g = np.zeros((GLYPH_HEIGHT, w), dtype=np.uint8)
    base = BASELINE - 1
    # entry (right) and exit (left) connectors on the baseline
    _stamp(g, np.arange(0, 3.0, 0.25), np.full(12, base))
    _stamp(g, np.arange(w - 4, w, 0.25), np.full(16, base))
    t = np.linspace(0.0, 1.0, 80)
    kinds = rng.choice(6, size=int(rng.integers(2, 4)), replace=False)
    for kind in kinds:
        if kind == 0:  # bowl resting on the baseline
            cx = rng.uniform(4, w - 5)
            rx, ry = rng.uniform(3, w / 2 - 1), rng.uniform(3, 8)
            a0 = rng.uniform(0, np.pi)
            a = a0 + t * rng.uniform(np.pi * 0.6, np.pi * 1.4)
            _stamp(g, cx + rx * np.cos(a), base - ry + ry * np.sin(a))
        elif kind == 1:  # ascender
            x = rng.uniform(2, w - 4)
            top = rng.uniform(3, 12)
            lean = rng.uniform(-3, 3)
            _stamp(g, x + lean * (1 - t), top + (base - top) * t)
        elif kind == 2:  # descender hook
            x = rng.uniform(3, w - 5)
            depth = rng.uniform(26, 30)
            a = np.pi * t
            _stamp(g, x + rng.uniform(2, 5) * (1 - np.cos(a)) * 0.5 * rng.choice([-1, 1]),
                   base + (depth - base) * np.sin(a / 2))
        elif kind == 3:  # loop above the baseline
            cx, cy = rng.uniform(4, w - 5), rng.uniform(9, 16)
            r = rng.uniform(2, 4)
            a = 2 * np.pi * t
            _stamp(g, cx + r * np.cos(a), cy + r * np.sin(a))
        elif kind == 4:  # diagonal slash
            x0, x1 = rng.uniform(1, w - 2, size=2)
            y0, y1 = rng.uniform(6, 14), rng.uniform(14, base)
            _stamp(g, x0 + (x1 - x0) * t, y0 + (y1 - y0) * t)
        else:  # horizontal tooth
            x0 = rng.uniform(1, w / 2)
            x1 = rng.uniform(w / 2, w - 2)
            y = rng.uniform(12, base - 3)
            _stamp(g, x0 + (x1 - x0) * t, np.full_like(t, y))
            _stamp(g, np.full_like(t, x0), y + (base - y) * t)
    n_dots = int(rng.choice([0, 0, 1, 2, 3]))
    if n_dots:
        above = rng.random() < 0.6
        y = rng.uniform(4, 9) if above else rng.uniform(25, 29)
        x = rng.uniform(1, w - 2 - 3 * (n_dots - 1))
        for d in range(n_dots):
            _stamp(g, np.array([x + 3 * d]), np.array([y]))
    return g


def glyph_distance(a, b):
    """Fraction of differing pixels after centering both on the wider canvas."""
    w = max(a.shape[1], b.shape[1])

    def center(g):
        pad = w - g.shape[1]
        return np.pad(g, ((0, 0), (pad // 2, pad - pad // 2)))

    return float((center(a) != center(b)).sum()) / (GLYPH_HEIGHT * w)


def build_atlas(seed=42, alphabet_size=28, retries=200) -> GlyphAtlas:
    """Deterministic procedural glyphs, pairwise separated by >= 10% of pixels."""
    charset(alphabet_size)
    rng = np.random.default_rng([seed, 0x61746C73])
    glyphs = []
    for _ in range(alphabet_size):
        for _attempt in range(retries):
            g = _draw_glyph(rng)
            if all(glyph_distance(g, h) >= MIN_SEPARATION for h in glyphs):
                glyphs.append(g)
                break
        else:
            raise RuntimeError(
                f"could not separate {alphabet_size} glyphs; lower the alphabet size or enlarge glyphs")
    return GlyphAtlas(seed, glyphs)


# -- rendering -----------------------------------------------------------

def render_word(atlas: GlyphAtlas, labels) -> np.ndarray:
    """Glyphs joined right-to-left with a 2-pixel cursive overlap."""
    labels = list(labels)
    lo, hi = WORD_LENGTHS
    if not lo <= len(labels) <= hi:
        raise ValueError(f"word length must lie in [{lo}, {hi}]")
    if any(not 0 <= c < atlas.alphabet_size for c in labels):
        raise ValueError("label outside the alphabet")
    gl = [atlas.glyphs[c] for c in labels]
    width = sum(g.shape[1] for g in gl) - JOIN * (len(gl) - 1)
    out = np.zeros((GLYPH_HEIGHT, width), dtype=np.uint8)
    right = width
    for g in gl:
        left = right - g.shape[1]
        out[:, left:right] |= g
        right = left + JOIN
    return out.astype(np.float64)


@dataclass
class Augmentation:
    mode: str = "none"
    density: float = 0.0
    salt_seed: int = 0
    radius: int = 1
    angle: float = 0.0


@dataclass
class AugmentPolicy:
    ratio: float = 0.30
    salt_range: tuple = (0.02, 0.08)
    bold_radius: int = 1
    max_angle: float = 3.0

    def draw(self, rng, force=None) -> Augmentation:
        # every draw happens regardless of the outcome so streams stay aligned
        u = rng.random()
        pick = int(rng.integers(3))
        density = float(rng.uniform(*self.salt_range))
        salt_seed = int(rng.integers(2 ** 31))
        angle = float(rng.uniform(-self.max_angle, self.max_angle))
        if force is not None:
            mode = force
        else:
            mode = ("salt", "bold", "rotate")[pick] if u < self.ratio else "none"
        if mode not in AUGMENT_MODES:
            raise ValueError(f"unknown augmentation {mode!r}")
        return Augmentation(mode, density, salt_seed, self.bold_radius, angle)


def apply_augmentation(img, aug: Augmentation):
    if aug.mode == "none":
        return img
    if aug.mode == "salt":
        return imaging.salt_pepper(img, aug.density, aug.salt_seed)
    if aug.mode == "bold":
        return imaging.bolden(img, aug.radius)
    return imaging.rotate(img, aug.angle, fill=0.0)


def render_line(atlas, words, aug: Augmentation | None = None):
    """Words (label lists, reading order) -> line image."""
    img = imaging.hconcat_rtl([render_word(atlas, w) for w in words], WORD_GAP, 0.0)
    return apply_augmentation(img, aug) if aug is not None else img


def _aug_rng(sample_seed):
    return np.random.default_rng([sample_seed, 1])


def rasterize_transcript(atlas, transcript, seed, augment="none", policy=None):
    """Re-render a manifest row from its transcript, seed and augmentation mode."""
    policy = policy or AugmentPolicy()
    words = [atlas.encode(w) for w in transcript.split(" ")]
    aug = policy.draw(_aug_rng(seed), force=augment)
    return render_line(atlas, words, aug)


# -- sentence stream -----------------------------------------------------

def _h64(*parts):
    h = hashlib.blake2b(":".join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


class _Permutation:
    """Keyed bijection on ``[0, n)``: 4-round Feistel with cycle walking."""

    def __init__(self, key, n):
        self.key, self.n = key, n
        bits = max(2, (n - 1).bit_length())
        bits += bits % 2
        self.half = bits // 2
        self.mask = (1 << self.half) - 1
        self.nbytes = (self.half + 7) // 8 + 8

    def _round(self, r, x):
        h = hashlib.blake2b(f"{self.key}:{r}:{x}".encode(), digest_size=min(64, self.nbytes))
        return int.from_bytes(h.digest(), "little") & self.mask

    def _once(self, x):
        left, right = x >> self.half, x & self.mask
        for r in range(4):
            left, right = right, left ^ self._round(r, right)
        return (left << self.half) | right

    def __call__(self, i):
        if not 0 <= i < self.n:
            raise IndexError(i)
        x = self._once(i)
        while x >= self.n:
            x = self._once(x)
        return x


@dataclass
class Sample:
    image: np.ndarray
    transcript: str
    words: list
    augment: str
    seed: int

    @property
    def n_words(self):
        return len(self.words)

    def manifest_row(self, image_path):
        return {"image": image_path, "transcript": self.transcript, "words": self.n_words,
                "augment": self.augment, "seed": self.seed}


class LineGenerator:
    """Seeded, duplicate-free stream of synthetic lines (one epoch).

    Each sample first draws its shape (word count uniform in
    ``[1, max_words]``, each word length uniform in 7..10).  The symbols come
    from the next unused index of that shape's keyed permutation.  Indices
    are interleaved over ``(stream, split)`` slots, so streams and splits of
    one corpus seed are mutually disjoint.  :class:`EpochExhausted` is raised
    once a shape runs dry.
    """

    def __init__(self, atlas, seed=0, max_words=1, augment_ratio=0.30, split="train",
                 fixed_words=None, force_augment=None, policy=None, stream=0):
        if max_words < 1:
            raise ValueError("max_words must be >= 1")
        if not 0.0 <= augment_ratio <= 1.0:
            raise ValueError("augment_ratio must lie in [0, 1]")
        if split not in SPLITS:
            raise ValueError(f"split must be one of {sorted(SPLITS)}")
        if fixed_words is not None and fixed_words < 1:
            raise ValueError("fixed_words must be >= 1")
        if not 0 <= stream < N_STREAMS:
            raise ValueError(f"stream must lie in [0, {N_STREAMS})")
        self.atlas = atlas
        self.seed = seed
        self.max_words = max_words
        self.split = split
        self.fixed_words = fixed_words
        self.force_augment = force_augment
        self.policy = policy or AugmentPolicy(ratio=augment_ratio)
        if policy is None:
            self.policy.ratio = augment_ratio
        self.stream = stream
        self.index = 0
        self._counters: dict[tuple, int] = {}
        self._perms: dict[tuple, _Permutation] = {}

    def _symbols(self, shape):
        A = self.atlas.alphabet_size
        n = A ** sum(shape)
        if shape not in self._perms:
            self._perms[shape] = _Permutation(f"{self.seed}:{shape}", n)
        c = self._counters.get(shape, 0)
        slot = (c * N_STREAMS + self.stream) * len(SPLITS) + SPLITS[self.split]
        if slot >= n:
            raise EpochExhausted(f"all sentences of shape {shape} used by stream {self.stream}")
        self._counters[shape] = c + 1
        idx = self._perms[shape](slot)
        digits = []
        for _ in range(sum(shape)):
            idx, d = divmod(idx, A)
            digits.append(d)
        words, pos = [], 0
        for ln in shape:
            words.append(digits[pos:pos + ln])
            pos += ln
        return words

    def next_sample(self) -> Sample:
        sample_seed = _h64(self.seed, self.split, self.stream, self.index)
        srng = np.random.default_rng([sample_seed, 0])
        k = self.fixed_words or int(srng.integers(1, self.max_words + 1))
        shape = tuple(int(v) for v in srng.integers(WORD_LENGTHS[0], WORD_LENGTHS[1] + 1, size=k))
        words = self._symbols(shape)
        self.index += 1
        aug = self.policy.draw(_aug_rng(sample_seed), force=self.force_augment)
        img = render_line(self.atlas, words, aug)
        transcript = " ".join(self.atlas.decode(w) for w in words)
        return Sample(img, transcript, words, aug.mode, sample_seed)

    def __iter__(self):
        return self

    def __next__(self):
        return self.next_sample()

    def take(self, n):
        return [self.next_sample() for _ in range(n)]


def generate_sample(generator: LineGenerator):
    s = generator.next_sample()
    return s.image, s.transcript


def variant(atlas, sample: Sample, mode, policy=None):
    """The same sentence and seed rendered under a different augmentation."""
    img = rasterize_transcript(atlas, sample.transcript, sample.seed, mode, policy)
    return Sample(img, sample.transcript, sample.words, mode, sample.seed)


# -- curriculum ----------------------------------------------------------

@dataclass(frozen=True)
class CurriculumStage:
    index: int
    max_words: int
    freeze_conv: bool


def max_words_for_stage(stage):
    return 1 if stage == 0 else 2 + 2 * (stage - 1)


def curriculum(stage) -> CurriculumStage:
    """Stage 0: one word, nothing frozen.  Later stages: 2, 4, 6, ... words, conv frozen."""
    if stage < 0:
        raise ValueError("stage must be >= 0")
    return CurriculumStage(stage, max_words_for_stage(stage), stage >= 1)


# -- batching ------------------------------------------------------------

def make_batch(images, multiple=4):
    """Left-pad ink-high lines to one width (a multiple of ``multiple``).

    Returns ``(batch [N, 1, H, W], widths [N])`` with each valid width
    rounded up to the multiple; the rounding pad also goes on the left.
    """
    widths = np.array([-(-im.shape[1] // multiple) * multiple for im in images])
    H = images[0].shape[0]
    W = int(widths.max())
    batch = np.zeros((len(images), 1, H, W))
    for n, im in enumerate(images):
        batch[n, 0, :, W - im.shape[1]:] = im
    return batch, widths
