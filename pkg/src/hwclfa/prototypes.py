"""Normal/abnormal text prototypes from a two-tier prompt ensemble."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EncoderWidthMismatch, UnknownState

NORMAL_STATES = (
    "[o]",
    "clear [o]",
    "well-written [o]",
    "legible [o]",
    "neatly drawn [o]",
    "[o] with normal",
    "healthy [o]",
)

ABNORMAL_STATES = (
    "distorted [o]",
    "unclear [o]",
    "trembled [o]",
    "impaired [o]",
    "[o] with shaky lines",
    "[o] with abnormal",
    "poorly written [o]",
)

TEMPLATES = (
    "a bad photo of a/the [c].",
    "a good photo of a/the [c].",
    "a black and white photo of a/the [c].",
    "a low resolution photo of a/the [c].",
    "a photo of one [c].",
    "a dark photo of a/the [c].",
    "a cropped photo of a/the [c].",
    "a photo of a large [c].",
    "a photo of a cool [c].",
    "a bright photo of a/the [c].",
    "a photo of the small [c].",
    "a close-up photo of the [c].",
    "a blurry photo of a/the [c].",
    "a jpeg corrupted photo of a/the [c].",
    "a photo of a/the [c].",
    "there is a/the [c] in the scene.",
    "this is a/the/one [c] in the scene.",
)


@dataclass(frozen=True)
class PromptBank:
    normal: tuple = NORMAL_STATES
    abnormal: tuple = ABNORMAL_STATES
    templates: tuple = TEMPLATES

    def __post_init__(self):
        for pat in self.normal + self.abnormal:
            if pat.count("[o]") != 1:
                raise ValueError(f"state pattern needs exactly one [o] slot: {pat!r}")
        for pat in self.templates:
            if pat.count("[c]") != 1:
                raise ValueError(f"template needs exactly one [c] slot: {pat!r}")


DEFAULT_BANK = PromptBank()


def build_phrases(task_name, state, bank=DEFAULT_BANK):
    """Instantiate every state pattern with the task noun phrase, in table order."""
    if not task_name:
        raise ValueError("task name must be non-empty")
    if state == "normal":
        patterns = bank.normal
    elif state == "abnormal":
        patterns = bank.abnormal
    else:
        raise UnknownState(f"state must be 'normal' or 'abnormal', got {state!r}")
    return [p.replace("[o]", task_name) for p in patterns]


_ALT = re.compile(r"\b\w+(?:/\w+)+\b")


def _expand_alternatives(template):
    m = _ALT.search(template)
    if m is None:
        return [template]
    head, tail = template[: m.start()], template[m.end() :]
    out = []
    for word in m.group(0).split("/"):
        out.extend(_expand_alternatives(head + word + tail))
    return out


def expand_templates(phrase, bank=DEFAULT_BANK):
    """Every template filled with ``phrase``; ``a/the`` style slashes fan out."""
    if not phrase:
        raise ValueError("phrase must be non-empty")
    sentences = []
    for template in bank.templates:
        head, tail = template.split("[c]")
        for variant in _expand_alternatives(head):
            sentences.append(variant + phrase + tail)
    return sentences


def ensemble_sentences(task_name, state, bank=DEFAULT_BANK):
    return [s for phrase in build_phrases(task_name, state, bank) for s in expand_templates(phrase, bank)]


# ---------------------------------------------------------------------------
# encoders


def _keyed_unit_vector(seed, payload, width):
    digest = hashlib.blake2b(payload, digest_size=16, key=int(seed).to_bytes(8, "little", signed=True)).digest()
    gen = np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))
    v = gen.standard_normal(width)
    return v / np.linalg.norm(v)


class StubEncoder:
    """Deterministic stand-in text tower: one pseudo-random unit vector per sentence.

    Vectors come from a Philox stream keyed by a hash of (seed, sentence bytes).
    Distinct sentences are nearly orthogonal, so prototypes of different
    tasks share no direction.
    """

    def __init__(self, seed=0, width=768):
        if width < 8:
            raise ValueError("width must be at least 8")
        self.seed = int(seed)
        self.width = int(width)

    def embed(self, sentence):
        return _keyed_unit_vector(self.seed, sentence.encode("utf-8"), self.width)


class LexicalEncoder(StubEncoder):
    """Bag-of-words stand-in: sentence vector = normalized sum of word vectors.

    Sentences that share words share directions, so e.g. every task's
    abnormal prototype leans toward the same state words. This is what
    cross-task zero-shot transfer needs from a text encoder.
    """

    _word = re.compile(r"[a-z0-9\-]+")

    def embed(self, sentence):
        words = self._word.findall(sentence.lower())
        if not words:
            return super().embed(sentence)
        v = sum(_keyed_unit_vector(self.seed, w.encode("utf-8"), self.width) for w in words)
        return v / np.linalg.norm(v)


def stub_encoder(seed, width):
    return StubEncoder(seed, width)


def make_encoder(kind, seed, width):
    if kind == "stub":
        return StubEncoder(seed, width)
    if kind == "lexical":
        return LexicalEncoder(seed, width)
    raise ValueError(f"unknown encoder {kind!r}")


# ---------------------------------------------------------------------------
# prototypes


@dataclass
class TextPrototypes:
    task_id: int
    e_nor: np.ndarray
    e_abn: np.ndarray

    @property
    def width(self):
        return len(self.e_nor)

    @property
    def matrix(self):
        """T x 2 matrix, columns (normal, abnormal)."""
        return np.column_stack([self.e_nor, self.e_abn])


def _mean_unit(vectors):
    m = np.sum(vectors, axis=0) / len(vectors)
    return m / np.linalg.norm(m)


def embed_prototypes(encoder, task, bank=DEFAULT_BANK, width=None):
    """Mean embedding of every (state phrase x template) sentence, then l2-normalized."""
    width = encoder.width if width is None else width
    cols = []
    for state in ("normal", "abnormal"):
        vecs = []
        for s in ensemble_sentences(task.name, state, bank):
            v = np.asarray(encoder.embed(s), dtype=np.float64)
            if v.shape != (width,):
                raise EncoderWidthMismatch(f"encoder produced {v.shape}, expected ({width},)")
            vecs.append(v)
        cols.append(_mean_unit(np.stack(vecs)))
    return TextPrototypes(task.task_id, cols[0], cols[1])


def build_all(encoder, tasks, bank=DEFAULT_BANK):
    return {t.task_id: embed_prototypes(encoder, t, bank) for t in tasks}


def save_prototypes(protos, json_path, blob_path=None):
    """Write a JSON manifest plus a flat little-endian float32 blob."""
    json_path = Path(json_path)
    blob_path = Path(blob_path) if blob_path else json_path.with_suffix(".bin")
    chunks, entries, offset = [], [], 0
    for task_id in sorted(protos):
        p = protos[task_id]
        entries.append({"task_id": task_id, "T": p.width, "offsets": {"nor": offset, "abn": offset + p.width}})
        chunks += [p.e_nor, p.e_abn]
        offset += 2 * p.width
    blob = np.concatenate(chunks).astype("<f4").tobytes() if chunks else b""
    blob_path.write_bytes(blob)
    doc = {"blob": blob_path.name, "dtype": "float32-le", "prototypes": entries}
    json_path.write_text(json.dumps(doc, indent=1) + "\n")
    return json_path, blob_path


def load_prototypes(json_path):
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text())
    data = np.frombuffer((json_path.parent / doc["blob"]).read_bytes(), dtype="<f4").astype(np.float64)
    out = {}
    for e in doc["prototypes"]:
        t, w = e["T"], e["offsets"]
        out[e["task_id"]] = TextPrototypes(
            e["task_id"], data[w["nor"] : w["nor"] + t].copy(), data[w["abn"] : w["abn"] + t].copy()
        )
    return out
