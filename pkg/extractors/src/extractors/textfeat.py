"""Caption feature extraction: bow, w2v, bert-mean, clip-text.

The ``stub`` backend replaces the pretrained models with a deterministic
hash-seeded random projection per token so the whole pipeline (tokenize,
embed, pool, write) can be exercised without network access. Stub vectors
carry the same dimensionality as the real feature they stand in for.
"""

import hashlib
import logging
import re
import sys
from collections import Counter
from typing import Dict, List

import numpy as np

from .manifest import FIXED_DIMS, ExtractionManifest, load_captions
from .txvf import write_bank

log = logging.getLogger("extractors")

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def build_bow_vocabulary(captions: Dict[str, str], min_count: int = 1) -> List[str]:
    """Sorted vocabulary of tokens appearing at least min_count times."""
    counts = Counter(t for text in captions.values() for t in tokenize(text))
    return sorted(t for t, c in counts.items() if c >= min_count)


def bow_vector(text: str, vocabulary: List[str]) -> np.ndarray:
    index = {t: i for i, t in enumerate(vocabulary)}
    vec = np.zeros(len(vocabulary), dtype=np.float64)
    for token in tokenize(text):
        i = index.get(token)
        if i is not None:
            vec[i] += 1.0
    return vec


def _stub_token_vector(token: str, dim: int, salt: str) -> np.ndarray:
    """Deterministic pseudo-embedding: one fixed Gaussian draw per token."""
    digest = hashlib.blake2b(f"{salt}:{token}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


def _stub_sentence_vector(text: str, dim: int, salt: str) -> np.ndarray:
    tokens = tokenize(text)
    if not tokens:
        return np.zeros(dim)
    return np.mean([_stub_token_vector(t, dim, salt) for t in tokens], axis=0)


class _PretrainedText:
    """Lazy wrappers around the real models; import/load errors surface
    with a remediation hint naming the pinned checkpoint."""

    def __init__(self, kind: str, checkpoint: str):
        self.kind = kind
        self.checkpoint = checkpoint
        try:
            if kind == "bert-mean":
                from transformers import AutoModel, AutoTokenizer

                self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
                self.model = AutoModel.from_pretrained(checkpoint).eval()
            elif kind == "clip-text":
                from transformers import CLIPModel, CLIPProcessor

                self.processor = CLIPProcessor.from_pretrained(checkpoint)
                self.model = CLIPModel.from_pretrained(checkpoint).eval()
            elif kind == "w2v":
                import gensim.downloader

                self.model = gensim.downloader.load(checkpoint)
            else:
                raise ValueError(f"no pretrained path for {kind!r}")
        except Exception as exc:
            raise RuntimeError(
                f"could not load {kind} checkpoint {checkpoint!r}: {exc}. "
                "Pin a locally available checkpoint in the manifest or use "
                'backend "stub" for pipeline testing.'
            ) from exc

    def sentence_vector(self, text: str) -> np.ndarray:
        import torch

        if self.kind == "bert-mean":
            with torch.no_grad():
                enc = self.tokenizer(text or " ", return_tensors="pt", truncation=True)
                out = self.model(**enc).last_hidden_state[0]
            return out.mean(dim=0).numpy().astype(np.float64)
        if self.kind == "clip-text":
            with torch.no_grad():
                enc = self.processor(text=[text or " "], return_tensors="pt", padding=True)
                out = self.model.get_text_features(**enc)[0]
            return out.numpy().astype(np.float64)
        # w2v: mean of the individual word vectors
        vecs = [self.model[t] for t in tokenize(text) if t in self.model]
        dim = self.model.vector_size
        if not vecs:
            return np.zeros(dim)
        return np.mean(vecs, axis=0).astype(np.float64)


def extract_text(manifest: ExtractionManifest) -> Dict[str, str]:
    """Write one bank per requested text feature; returns kind -> path."""
    captions = load_captions(manifest.captions)
    if not captions:
        raise ValueError(f"no captions found in {manifest.captions}")
    written: Dict[str, str] = {}
    for kind in manifest.text_features:
        if kind == "bow":
            vocab = build_bow_vocabulary(captions, manifest.bow_min_count)
            if not vocab:
                raise ValueError("bow vocabulary is empty at this min_count")
            dim = len(vocab)
            vectors = {cid: bow_vector(text, vocab) for cid, text in captions.items()}
        else:
            dim = FIXED_DIMS[kind]
            if manifest.backend == "stub":
                salt = f"{kind}:{manifest.seed}"
                vectors = {
                    cid: _stub_sentence_vector(text, dim, salt)
                    for cid, text in captions.items()
                }
            else:
                model = _PretrainedText(kind, manifest.checkpoint(kind))
                vectors = {
                    cid: model.sentence_vector(text)
                    for cid, text in captions.items()
                }
        for cid, text in captions.items():
            if not text.strip():
                log.warning("caption %r is empty; wrote a zero vector", cid)
                print(
                    f"warning: caption {cid!r} is empty; wrote a zero vector",
                    file=sys.stderr,
                )
        path = manifest.bank_path(kind)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_bank(vectors, dim, path)
        written[kind] = str(path)
    return written
