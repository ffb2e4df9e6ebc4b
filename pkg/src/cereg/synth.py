"""Synthetic dataset rendering: bag-of-words sentences and two-channel glyphs.

Rendering is a pure function of (attribute assignment, noise_seed, renderer
spec), which is what makes counterfactual pairs exact: re-rendering with one
attribute flipped and the same noise_seed changes only that attribute's
contribution.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .scm import DgpSpec, Scm

# verbatim topic word lists, including the duplicated "pear" and the
# "teriffic" spelling
WORDS_CAUSAL_0 = ("apple", "mango", "tomato", "cherry", "pear", "fruit",
                  "banana", "pear", "grapes")
WORDS_CAUSAL_1 = ("rose", "jasmine", "tulip", "lotus", "daisy", "sunflower",
                  "flower", "marigold", "dahlia", "orchid")
WORDS_CONFOUND_0 = ("bad", "inferior", "substandard", "inadequate", "rotten",
                    "pathetic", "faulty", "defective")
WORDS_CONFOUND_1 = ("good", "best", "awesome", "teriffic", "mighty",
                    "gigantic", "tremendous", "mega", "colossal")
WORDS_SPURIOUS_0 = ("horror", "gore", "crime", "thriller", "mystery",
                    "gangster", "drama", "dark")
WORDS_SPURIOUS_1 = ("comedy", "romance", "fantasy", "sports", "epic",
                    "animated", "adventure", "science")

DEFAULT_WORD_LISTS = (
    ("causal", WORDS_CAUSAL_0, WORDS_CAUSAL_1),
    ("confound", WORDS_CONFOUND_0, WORDS_CONFOUND_1),
    ("spurious", WORDS_SPURIOUS_0, WORDS_SPURIOUS_1),
)

_EMB_SALT = 101
_NOISE_SALT = 202


@dataclass(frozen=True)
class TextRendererSpec:
    """Bag-of-words renderer: per attribute value, sample words_per_attribute
    words and average their fixed seeded embeddings. The empty-string word is
    reserved and embeds to zero."""

    seed: int
    attributes: tuple[str, ...]
    word_lists: tuple = DEFAULT_WORD_LISTS
    words_per_attribute: int = 3
    embed_dim: int = 32
    embed_scale: float = 0.75
    kind: str = field(default="bag_of_words", init=False)

    def lists_for(self, attr: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
        for name, w0, w1 in self.word_lists:
            if name == attr:
                return tuple(w0), tuple(w1)
        raise KeyError(f"no word lists for attribute {attr!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "seed": self.seed, "attributes": list(self.attributes),
            "word_lists": [[n, list(w0), list(w1)] for n, w0, w1 in self.word_lists],
            "words_per_attribute": self.words_per_attribute,
            "embed_dim": self.embed_dim, "embed_scale": self.embed_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "TextRendererSpec":
        return TextRendererSpec(
            seed=int(d["seed"]), attributes=tuple(d["attributes"]),
            word_lists=tuple((n, tuple(w0), tuple(w1)) for n, w0, w1 in d["word_lists"]),
            words_per_attribute=int(d["words_per_attribute"]),
            embed_dim=int(d["embed_dim"]), embed_scale=float(d["embed_scale"]),
        )


# hand-drawn 8x8 glyphs for the two digit classes
GLYPH_DIGIT_0 = np.array([  # a "3"
    [0, 1, 1, 1, 1, 1, 0, 0],
    [0, 0, 0, 0, 0, 1, 1, 0],
    [0, 0, 0, 0, 0, 1, 1, 0],
    [0, 0, 1, 1, 1, 1, 0, 0],
    [0, 0, 0, 0, 0, 1, 1, 0],
    [0, 0, 0, 0, 0, 1, 1, 0],
    [0, 1, 1, 1, 1, 1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0],
], dtype=float)
GLYPH_DIGIT_1 = np.array([  # a "4"
    [0, 0, 0, 0, 1, 1, 0, 0],
    [0, 0, 0, 1, 1, 1, 0, 0],
    [0, 0, 1, 1, 0, 1, 0, 0],
    [0, 1, 1, 0, 0, 1, 0, 0],
    [0, 1, 1, 1, 1, 1, 1, 0],
    [0, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0],
], dtype=float)


@dataclass(frozen=True)
class GlyphRendererSpec:
    """Two-channel glyph grid: the digit bit picks the glyph, the rotation bit
    rotates it 90 degrees, the color bit picks the channel. Seeded pixel noise
    is independent of all attributes."""

    seed: int
    attributes: tuple[str, ...] = ("color", "digit", "rotation")
    size: int = 8
    noise: float = 0.05
    kind: str = field(default="glyph_image", init=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "attributes": list(self.attributes),
                "size": self.size, "noise": self.noise}

    @staticmethod
    def from_dict(d: dict) -> "GlyphRendererSpec":
        return GlyphRendererSpec(seed=int(d["seed"]), attributes=tuple(d["attributes"]),
                                 size=int(d["size"]), noise=float(d["noise"]))


@dataclass(frozen=True)
class TabularRendererSpec:
    """Raw-bit features for abstract SCMs: each feature_var contributes its
    value as one coordinate. Attributes left out of feature_vars (typically
    the treatment) appear nowhere in the features, so an estimator's appended
    attribute bit is their only encoding."""

    seed: int
    attributes: tuple[str, ...]
    feature_vars: tuple[str, ...]
    kind: str = field(default="tabular_bits", init=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "attributes": list(self.attributes),
                "feature_vars": list(self.feature_vars)}

    @staticmethod
    def from_dict(d: dict) -> "TabularRendererSpec":
        return TabularRendererSpec(seed=int(d["seed"]), attributes=tuple(d["attributes"]),
                                   feature_vars=tuple(d["feature_vars"]))


def renderer_from_dict(d: dict):
    if d["kind"] == "bag_of_words":
        return TextRendererSpec.from_dict(d)
    if d["kind"] == "glyph_image":
        return GlyphRendererSpec.from_dict(d)
    if d["kind"] == "tabular_bits":
        return TabularRendererSpec.from_dict(d)
    raise ValueError(f"unknown renderer kind {d['kind']!r}")


def _word_key(word: str) -> int:
    # stable across processes, unlike hash()
    return int.from_bytes(hashlib.sha256(word.encode()).digest()[:4], "little")


@functools.lru_cache(maxsize=32)
def _embedding_table(spec: TextRendererSpec) -> dict[str, np.ndarray]:
    vocab = sorted({w for _, w0, w1 in spec.word_lists for w in (*w0, *w1)})
    table = {}
    for w in vocab:
        if w == "":
            table[w] = np.zeros(spec.embed_dim)
            continue
        # each word's vector depends only on (seed, word), so editing one
        # list never perturbs the embeddings of unrelated words
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _EMB_SALT, _word_key(w)]))
        table[w] = rng.normal(0.0, spec.embed_scale, spec.embed_dim)
    return table


def render_text_blocks(spec: TextRendererSpec, assignment: dict[str, int],
                       noise_seed: int) -> dict[str, np.ndarray]:
    """Per-attribute contributions; the full feature vector is their sum."""
    table = _embedding_table(spec)
    blocks = {}
    n_attrs = len(spec.attributes)
    for i, attr in enumerate(spec.attributes):
        words = spec.lists_for(attr)[assignment[attr]]
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, noise_seed, i]))
        take = min(spec.words_per_attribute, len(words))
        idx = rng.choice(len(words), size=take, replace=False)
        block = np.mean([table[words[j]] for j in idx], axis=0) / n_attrs
        blocks[attr] = block
    return blocks


def render_text(spec: TextRendererSpec, assignment: dict[str, int], noise_seed: int) -> np.ndarray:
    blocks = render_text_blocks(spec, assignment, noise_seed)
    return np.sum([blocks[a] for a in spec.attributes], axis=0)


def render_glyph(spec: GlyphRendererSpec, assignment: dict[str, int], noise_seed: int) -> np.ndarray:
    glyph = GLYPH_DIGIT_1 if assignment["digit"] else GLYPH_DIGIT_0
    if spec.size != 8:
        reps = spec.size // 8
        glyph = np.kron(glyph, np.ones((reps, reps)))
    if assignment["rotation"]:
        glyph = np.rot90(glyph)
    canvas = np.zeros((spec.size, spec.size, 2))
    canvas[:, :, assignment["color"]] = glyph
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, noise_seed, _NOISE_SALT]))
    canvas = canvas + rng.normal(0.0, spec.noise, canvas.shape) if spec.noise else canvas
    return canvas.reshape(-1)


def render_tabular(spec: TabularRendererSpec, assignment: dict[str, int],
                   noise_seed: int) -> np.ndarray:
    return np.array([float(assignment[v]) for v in spec.feature_vars])


def render(spec, assignment: dict[str, int], noise_seed: int) -> np.ndarray:
    if spec.kind == "bag_of_words":
        return render_text(spec, assignment, noise_seed)
    if spec.kind == "tabular_bits":
        return render_tabular(spec, assignment, noise_seed)
    return render_glyph(spec, assignment, noise_seed)


# ---------------------------------------------------------------------------
# examples and datasets


@dataclass
class Example:
    features: np.ndarray
    label: int
    attributes: dict[str, int]
    noise_seed: int
    group: str  # "maj" iff label equals the spurious attribute's value
    counterfactuals: dict[str, np.ndarray]


def make_counterfactual(spec, example: Example, attr: str,
                        spurious_attr: str | None = None) -> Example:
    """Flip one attribute, keep every noise draw; an involution on features."""
    assignment = dict(example.attributes)
    assignment[attr] = 1 - assignment[attr]
    feats = render(spec, assignment, example.noise_seed)
    cfs = {a: render(spec, {**assignment, a: 1 - assignment[a]}, example.noise_seed)
           for a in spec.attributes}
    group = example.group
    if spurious_attr is not None:
        group = "maj" if example.label == assignment[spurious_attr] else "min"
    return Example(feats, example.label, assignment, example.noise_seed, group, cfs)


@dataclass
class LabeledDataset:
    examples: list[Example]
    split: str
    kappa_requested: float
    kappa_realized: float
    spurious_attr: str
    renderer: object
    dgp: dict | None = None

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(self.renderer.attributes)

    def features(self) -> np.ndarray:
        return np.stack([e.features for e in self.examples])

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.int64)

    def attr_values(self, attr: str) -> np.ndarray:
        return np.array([e.attributes[attr] for e in self.examples], dtype=np.int64)

    def cf_features(self, attr: str) -> np.ndarray:
        return np.stack([e.counterfactuals[attr] for e in self.examples])

    def groups(self) -> np.ndarray:
        return np.array([e.group for e in self.examples])


def assemble(scm: Scm, renderer, n_majority: int, kappa: float, seed: int,
             split: str = "train", spurious_attr: str = "spurious",
             label: str = "y", dgp: dict | None = None) -> LabeledDataset:
    """Sample the SCM and keep n_majority majority examples plus
    floor(n_majority*(1-kappa)/kappa) minority ones, so the realized group
    ratio hits kappa up to integer rounding."""
    if not 0.5 <= kappa < 1.0:
        raise ValueError(f"kappa must lie in [0.5, 1) for assembly, got {kappa}")
    if n_majority < 1:
        raise ValueError("n_majority must be positive")
    # epsilon guards float dust: 200*(1-0.8)/0.8 must floor to 50, not 49
    n_minority = int(np.floor(n_majority * (1.0 - kappa) / kappa + 1e-9))
    rng = np.random.default_rng(np.random.SeedSequence([seed, _split_salt(split)]))
    want = {"maj": n_majority, "min": n_minority}
    kept: list[Example] = []
    attrs = tuple(renderer.attributes)
    guard = 0
    while want["maj"] > 0 or want["min"] > 0:
        guard += 1
        if guard > 10_000:
            raise RuntimeError("sampling failed to fill group quotas")
        chunk = max(64, 2 * (want["maj"] + want["min"]))
        draw = scm.sample(chunk, rng)
        noise_seeds = rng.integers(0, 2**31, size=chunk)
        for i in range(chunk):
            y = int(draw[label][i])
            assignment = {a: int(draw[a][i]) for a in attrs}
            group = "maj" if y == assignment[spurious_attr] else "min"
            if want[group] <= 0:
                continue
            want[group] -= 1
            ns = int(noise_seeds[i])
            feats = render(renderer, assignment, ns)
            cfs = {a: render(renderer, {**assignment, a: 1 - assignment[a]}, ns)
                   for a in attrs}
            kept.append(Example(feats, y, assignment, ns, group, cfs))
            if want["maj"] <= 0 and want["min"] <= 0:
                break
    total = n_majority + n_minority
    realized = n_majority / total
    return LabeledDataset(kept, split, kappa, realized, spurious_attr, renderer, dgp)


def assemble_natural(scm: Scm, renderer, n: int, seed: int, split: str = "train",
                     spurious_attr: str | None = None, label: str = "y",
                     dgp: dict | None = None) -> LabeledDataset:
    """Sample the SCM as-is, without group quotas. Group tags and realized
    kappa are still recorded when a spurious attribute is named."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _split_salt(split)]))
    attrs = tuple(renderer.attributes)
    draw = scm.sample(n, rng)
    noise_seeds = rng.integers(0, 2**31, size=n)
    kept = []
    for i in range(n):
        y = int(draw[label][i])
        assignment = {a: int(draw[a][i]) for a in attrs}
        if spurious_attr is None:
            group = ""
        else:
            group = "maj" if y == assignment[spurious_attr] else "min"
        ns = int(noise_seeds[i])
        feats = render(renderer, assignment, ns)
        cfs = {a: render(renderer, {**assignment, a: 1 - assignment[a]}, ns)
               for a in attrs}
        kept.append(Example(feats, y, assignment, ns, group, cfs))
    realized = float(np.mean([e.group == "maj" for e in kept])) if spurious_attr else float("nan")
    return LabeledDataset(kept, split, float("nan"), realized,
                          spurious_attr or "", renderer, dgp)


def _split_salt(split: str) -> int:
    return {"train": 1, "val": 2, "test": 3}.get(split, 97)


DEFAULT_SPLIT_SIZES = {"train": 600, "val": 200, "test": 200}


def make_split_datasets(dgp_spec: DgpSpec, renderer, kappa: float, seed: int,
                        sizes: dict[str, int] | None = None,
                        spurious_attr: str = "spurious") -> dict[str, LabeledDataset]:
    """Train/test 80/20 with validation carved as 25% of train (600/200/200
    by default). Each split samples independently with a derived seed."""
    sizes = dict(sizes or DEFAULT_SPLIT_SIZES)
    scm = dgp_spec.build(seed)
    out = {}
    for split, total in sizes.items():
        n_majority = int(round(total * kappa))
        out[split] = assemble(scm, renderer, n_majority, kappa, seed, split=split,
                              spurious_attr=spurious_attr, dgp=dgp_spec.to_dict())
    return out


def default_renderer(dgp_spec: DgpSpec, seed: int):
    """Renderer matched to the template's observed attributes."""
    if dgp_spec.template == "SynTextObsConf":
        return TextRendererSpec(seed=seed, attributes=("causal", "confound", "spurious"))
    if dgp_spec.template == "SynTextUnobsConf":
        return TextRendererSpec(seed=seed, attributes=("causal", "spurious"))
    if dgp_spec.template == "Mnist34Latent":
        return GlyphRendererSpec(seed=seed)
    raise ValueError(f"no default renderer for template {dgp_spec.template!r}")


def spurious_attr_for(dgp_spec: DgpSpec) -> str:
    return "rotation" if dgp_spec.template == "Mnist34Latent" else "spurious"


# ---------------------------------------------------------------------------
# line-delimited dataset files


def write_datasets(path, datasets: dict[str, LabeledDataset]) -> None:
    first = next(iter(datasets.values()))
    header = {
        "kind": "header", "format_version": 1,
        "renderer": first.renderer.to_dict(),
        "spurious_attr": first.spurious_attr,
        "dgp": first.dgp,
        "splits": {s: {"kappa_requested": d.kappa_requested,
                       "kappa_realized": d.kappa_realized, "n": len(d)}
                   for s, d in datasets.items()},
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for split, ds in datasets.items():
            for e in ds.examples:
                rec = {
                    "kind": "example", "split": split,
                    "features": e.features.tolist(), "label": e.label,
                    "attributes": e.attributes, "noise_seed": e.noise_seed,
                    "group": e.group,
                    "counterfactuals": {a: v.tolist() for a, v in e.counterfactuals.items()},
                }
                fh.write(json.dumps(rec) + "\n")


def read_datasets(path) -> dict[str, LabeledDataset]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "header":
            raise ValueError("dataset file must start with a header record")
        renderer = renderer_from_dict(header["renderer"])
        by_split: dict[str, list[Example]] = {s: [] for s in header["splits"]}
        for line in fh:
            rec = json.loads(line)
            ex = Example(
                np.array(rec["features"]), int(rec["label"]),
                {k: int(v) for k, v in rec["attributes"].items()},
                int(rec["noise_seed"]), rec["group"],
                {a: np.array(v) for a, v in rec["counterfactuals"].items()},
            )
            by_split[rec["split"]].append(ex)
    out = {}
    for split, meta in header["splits"].items():
        out[split] = LabeledDataset(
            by_split[split], split, float(meta["kappa_requested"]),
            float(meta["kappa_realized"]), header["spurious_attr"], renderer,
            header.get("dgp"),
        )
    return out
