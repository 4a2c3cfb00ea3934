"""Corpus ingestion, pair enumeration, and synthetic PU data generation.

Two formats are supported: DocRED-style JSON arrays (``sents`` /
``vertexSet`` / ``labels``) and a generic one-document-per-line JSONL.
The synthetic generator plants relations over a fixed universe of
entities with continuous latent type vectors; a relation holds when an
affine-bilinear function of the two latents clears a per-class threshold
calibrated against a target prior. Observed labels are an i.i.d. censored
subset of the true ones, which is what the prior-shift corrections in the
loss module model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputError, ParseError
from .loss import ClassPriorTable, prior_shift

PROVENANCES = ("human", "distant", "synthetic-true", "synthetic-observed")


@dataclass(frozen=True)
class EntityMention:
    entity_index: int
    sent_index: int
    start: int
    end: int
    name: str
    etype: str = ""


@dataclass(frozen=True)
class RelationTriple:
    head: int
    tail: int
    relation: int
    provenance: str = "human"


@dataclass
class Document:
    doc_id: str
    sentences: list[list[str]]
    entities: list[list[EntityMention]]
    labels: list[RelationTriple]
    split: str = ""

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    def tokens(self) -> list[str]:
        return [tok for sent in self.sentences for tok in sent]

    def sentence_offsets(self) -> list[int]:
        offsets, total = [], 0
        for sent in self.sentences:
            offsets.append(total)
            total += len(sent)
        return offsets

    def flat_span(self, mention: EntityMention) -> tuple[int, int]:
        base = self.sentence_offsets()[mention.sent_index]
        return base + mention.start, base + mention.end

    def entity_name(self, index: int) -> str:
        return self.entities[index][0].name

    def validate(self) -> None:
        for e_idx, mentions in enumerate(self.entities):
            if not mentions:
                raise InputError(f"{self.doc_id}: entity {e_idx} has no mentions")
            for m in mentions:
                if m.sent_index < 0 or m.sent_index >= len(self.sentences):
                    raise InputError(f"{self.doc_id}: mention sentence {m.sent_index} out of range")
                sent_len = len(self.sentences[m.sent_index])
                if not (0 <= m.start < m.end <= sent_len):
                    raise InputError(
                        f"{self.doc_id}: span [{m.start}, {m.end}) outside sentence of {sent_len} tokens"
                    )
        n = self.num_entities
        for triple in self.labels:
            if triple.head == triple.tail:
                raise InputError(f"{self.doc_id}: self-relation on entity {triple.head}")
            if not (0 <= triple.head < n and 0 <= triple.tail < n):
                raise InputError(f"{self.doc_id}: triple references entity outside 0..{n - 1}")
            if triple.relation < 1:
                raise InputError(f"{self.doc_id}: relation ids are 1-based, got {triple.relation}")


def enumerate_pairs(doc: Document) -> list[tuple[int, int]]:
    """All ordered pairs of distinct entity indices, lexicographic."""
    n = doc.num_entities
    return [(h, t) for h in range(n) for t in range(n) if h != t]


# ---------------------------------------------------------------------------
# DocRED JSON


def build_relation_index(raw_docs) -> dict[str, int]:
    """Deterministic relation-code -> id map (sorted codes, ids from 1)."""
    codes = sorted({str(label["r"]) for doc in raw_docs for label in doc.get("labels", [])})
    return {code: i + 1 for i, code in enumerate(codes)}


def parse_docred(data, relation_index: dict[str, int] | None = None, provenance: str = "human") -> list[Document]:
    """Parse a DocRED-format JSON array into documents.

    Evidence fields are ignored. Relation codes are mapped through
    ``relation_index`` (built deterministically from the file when
    omitted); integer codes pass through unchanged.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    if isinstance(data, str):
        try:
            raw = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
    else:
        raw = data
    if not isinstance(raw, list):
        raise ParseError("DocRED corpus must be a JSON array of documents")
    if relation_index is None:
        relation_index = build_relation_index(raw)
    docs = []
    for d_idx, entry in enumerate(raw):
        try:
            sents = [[str(tok) for tok in sent] for sent in entry["sents"]]
            entities = []
            for e_idx, mentions in enumerate(entry["vertexSet"]):
                parsed = []
                for m in mentions:
                    parsed.append(
                        EntityMention(
                            entity_index=e_idx,
                            sent_index=int(m["sent_id"]),
                            start=int(m["pos"][0]),
                            end=int(m["pos"][1]),
                            name=str(m["name"]),
                            etype=str(m.get("type", "")),
                        )
                    )
                entities.append(parsed)
            labels = []
            for label in entry.get("labels", []):
                code = label["r"]
                rel = int(code) if isinstance(code, int) else relation_index[str(code)]
                labels.append(
                    RelationTriple(head=int(label["h"]), tail=int(label["t"]), relation=rel, provenance=provenance)
                )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ParseError(f"document {d_idx}: missing or malformed field ({exc})") from exc
        doc = Document(
            doc_id=str(entry.get("title", f"doc{d_idx}")),
            sentences=sents,
            entities=entities,
            labels=labels,
        )
        doc.validate()
        docs.append(doc)
    return docs


def serialize_docred(docs, relation_codes: dict[int, str] | None = None) -> list[dict]:
    """Inverse of :func:`parse_docred` (modulo evidence fields)."""
    out = []
    for doc in docs:
        out.append(
            {
                "title": doc.doc_id,
                "sents": [list(sent) for sent in doc.sentences],
                "vertexSet": [
                    [
                        {"name": m.name, "sent_id": m.sent_index, "pos": [m.start, m.end], "type": m.etype}
                        for m in mentions
                    ]
                    for mentions in doc.entities
                ],
                "labels": [
                    {
                        "h": t.head,
                        "t": t.tail,
                        "r": relation_codes[t.relation] if relation_codes else t.relation,
                    }
                    for t in doc.labels
                ],
            }
        )
    return out


# ---------------------------------------------------------------------------
# generic JSONL


def parse_generic_jsonl(data, provenance: str | None = None) -> list[Document]:
    """One JSON object per line: doc_id, sentences, mentions, triples."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    docs = []
    for line_no, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {line_no}: invalid JSON ({exc})") from exc
        try:
            n_entities = 1 + max((m["entity"] for m in entry["mentions"]), default=-1)
            entities: list[list[EntityMention]] = [[] for _ in range(n_entities)]
            for m in entry["mentions"]:
                entities[m["entity"]].append(
                    EntityMention(
                        entity_index=int(m["entity"]),
                        sent_index=int(m["sent"]),
                        start=int(m["start"]),
                        end=int(m["end"]),
                        name=str(m["name"]),
                        etype=str(m.get("type", "")),
                    )
                )
            labels = [
                RelationTriple(
                    head=int(t["h"]),
                    tail=int(t["t"]),
                    relation=int(t["r"]),
                    provenance=provenance or str(t.get("provenance", "human")),
                )
                for t in entry["triples"]
            ]
            doc = Document(
                doc_id=str(entry["doc_id"]),
                sentences=[[str(tok) for tok in sent] for sent in entry["sentences"]],
                entities=entities,
                labels=labels,
                split=str(entry.get("split", "")),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ParseError(f"line {line_no}: missing or malformed field ({exc})") from exc
        doc.validate()
        docs.append(doc)
    return docs


def document_to_json(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "sentences": [list(sent) for sent in doc.sentences],
        "mentions": [
            {"entity": m.entity_index, "sent": m.sent_index, "start": m.start, "end": m.end, "name": m.name, "type": m.etype}
            for mentions in doc.entities
            for m in mentions
        ],
        "triples": [
            {"h": t.head, "t": t.tail, "r": t.relation, "provenance": t.provenance} for t in doc.labels
        ],
        "split": doc.split,
    }


def write_jsonl(docs, path) -> None:
    """Serialize documents one per line with stable key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_json(doc), sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[Document]:
    with open(path, "rb") as fh:
        return parse_generic_jsonl(fh.read())


# ---------------------------------------------------------------------------
# synthetic PU corpora


@dataclass
class SynthConfig:
    num_train: int = 500
    num_dev: int = 100
    num_test: int = 100
    num_distant: int = 0
    entities_per_doc: int = 4
    min_mentions: int = 1
    max_mentions: int = 2
    sentences_per_doc: int = 3
    filler_vocab: int = 120
    universe_entities: int = 150
    latent_dim: int = 6
    num_relations: int = 8
    true_priors: object = 0.035
    keep_rate: object = 0.4
    distant_keep_rate: object = None
    noise_rate: float = 0.0
    linear_weight: float = 0.6
    censor_unit: str = "fact"
    seed: int = 0

    def prior_vector(self) -> np.ndarray:
        return _per_class(self.true_priors, self.num_relations, "true_priors", lo=0.0, hi=1.0, open_ends=True)

    def keep_vector(self) -> np.ndarray:
        return _per_class(self.keep_rate, self.num_relations, "keep_rate", lo=0.0, hi=1.0)

    def distant_keep_vector(self) -> np.ndarray:
        if self.distant_keep_rate is None:
            return self.keep_vector()
        return _per_class(self.distant_keep_rate, self.num_relations, "distant_keep_rate", lo=0.0, hi=1.0)

    def validate(self) -> None:
        if self.entities_per_doc < 2:
            raise ConfigError("need at least two entities per document")
        if self.entities_per_doc > self.universe_entities:
            raise ConfigError("entities_per_doc exceeds the entity universe")
        if not (1 <= self.min_mentions <= self.max_mentions):
            raise ConfigError("mention count range invalid")
        if not (0.0 <= self.noise_rate < 1.0):
            raise ConfigError("noise_rate must be in [0, 1)")
        if self.censor_unit not in ("fact", "occurrence"):
            raise ConfigError("censor_unit must be 'fact' or 'occurrence'")
        self.prior_vector()
        self.keep_vector()
        self.distant_keep_vector()


def _per_class(value, k: int, name: str, lo: float, hi: float, open_ends: bool = False) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (k,)).copy()
    if open_ends:
        ok = np.all(arr > lo) and np.all(arr < hi)
    else:
        ok = np.all(arr >= lo) and np.all(arr <= hi)
    if not ok:
        raise ConfigError(f"{name} out of range")
    return arr


@dataclass
class SynthResult:
    """Generated corpora plus exact realized priors.

    ``train`` carries censored (observed) labels and ``oracle`` the same
    documents with the full true label set; ``distant`` adds flip noise.
    ``dev`` and ``test`` are fully labeled for evaluation.
    """

    train: list[Document]
    oracle: list[Document]
    dev: list[Document]
    test: list[Document]
    distant: list[Document] = field(default_factory=list)
    distant_oracle: list[Document] = field(default_factory=list)
    priors_train: ClassPriorTable | None = None
    priors_distant: ClassPriorTable | None = None


class _World:
    """Fixed entity universe and planted relation rule."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        n, L, R = cfg.universe_entities, cfg.latent_dim, cfg.num_relations
        self.latents = rng.normal(size=(n, L)) / np.sqrt(L)
        self.bilinear = rng.normal(size=(R, L, L)) / np.sqrt(L)
        self.head_lin = rng.normal(size=(R, L)) * cfg.linear_weight
        self.tail_lin = rng.normal(size=(R, L)) * cfg.linear_weight
        scores = np.einsum("hl,rlm,tm->htr", self.latents, self.bilinear, self.latents)
        scores += np.einsum("rl,hl->hr", self.head_lin, self.latents)[:, None, :]
        scores += np.einsum("rl,tl->tr", self.tail_lin, self.latents)[None, :, :]
        off_diag = ~np.eye(n, dtype=bool)
        priors = cfg.prior_vector()
        self.thresholds = np.array(
            [np.quantile(scores[:, :, r][off_diag], 1.0 - priors[r]) for r in range(R)]
        )
        self.scores = scores
        self.names = [f"E{i:03d}" for i in range(n)]

    def relations_for(self, h: int, t: int) -> list[int]:
        row = self.scores[h, t]
        return [r + 1 for r in range(row.shape[0]) if row[r] > self.thresholds[r]]


def _make_document(doc_id: str, world: _World, cfg: SynthConfig, rng: np.random.Generator, split: str) -> Document:
    chosen = rng.choice(cfg.universe_entities, size=cfg.entities_per_doc, replace=False)
    mention_counts = rng.integers(cfg.min_mentions, cfg.max_mentions + 1, size=cfg.entities_per_doc)
    slots = [(e_idx, occurrence) for e_idx in range(cfg.entities_per_doc) for occurrence in range(mention_counts[e_idx])]
    order = rng.permutation(len(slots))
    per_sentence: list[list[int]] = [[] for _ in range(cfg.sentences_per_doc)]
    for pos, slot in enumerate(order):
        per_sentence[pos % cfg.sentences_per_doc].append(slots[slot][0])
    sentences: list[list[str]] = []
    mentions: list[list[EntityMention]] = [[] for _ in range(cfg.entities_per_doc)]
    for s_idx, entity_slots in enumerate(per_sentence):
        sent: list[str] = []
        for e_local in entity_slots:
            sent.append(f"w{rng.integers(cfg.filler_vocab):03d}")
            start = len(sent)
            universe_idx = chosen[e_local]
            sent.append(world.names[universe_idx])
            mentions[e_local].append(
                EntityMention(
                    entity_index=e_local,
                    sent_index=s_idx,
                    start=start,
                    end=start + 1,
                    name=world.names[universe_idx],
                    etype="ENT",
                )
            )
        sent.append(f"w{rng.integers(cfg.filler_vocab):03d}")
        sentences.append(sent)
    for e_local in range(cfg.entities_per_doc):
        if not mentions[e_local]:
            # every entity needs at least one mention; give it its own sentence
            universe_idx = chosen[e_local]
            sentences.append([world.names[universe_idx]])
            mentions[e_local].append(
                EntityMention(entity_index=e_local, sent_index=len(sentences) - 1, start=0, end=1,
                              name=world.names[universe_idx], etype="ENT")
            )
    labels = []
    for h in range(cfg.entities_per_doc):
        for t in range(cfg.entities_per_doc):
            if h == t:
                continue
            for rel in world.relations_for(chosen[h], chosen[t]):
                labels.append(RelationTriple(head=h, tail=t, relation=rel, provenance="synthetic-true"))
    doc = Document(doc_id=doc_id, sentences=sentences, entities=mentions, labels=labels, split=split)
    doc.validate()
    return doc


def _censor(docs, keep: np.ndarray, rng: np.random.Generator, unit: str = "fact") -> list[Document]:
    """Censor labels i.i.d. at the configured keep rate.

    ``fact`` draws one keep decision per distinct (head name, tail name,
    relation) fact, so an unlabeled fact is unlabeled in every document
    that expresses it (the knowledge-base-incompleteness picture that
    produces consistent false negatives). ``occurrence`` draws per triple
    occurrence instead.
    """
    if unit == "fact":
        facts = sorted(
            {(doc.entity_name(t.head), doc.entity_name(t.tail), t.relation) for doc in docs for t in doc.labels}
        )
        kept_facts = {fact for fact in facts if rng.random() < keep[fact[2] - 1]}
        out = []
        for doc in docs:
            kept = [
                replace(t, provenance="synthetic-observed")
                for t in doc.labels
                if (doc.entity_name(t.head), doc.entity_name(t.tail), t.relation) in kept_facts
            ]
            out.append(replace(doc, labels=kept))
        return out
    out = []
    for doc in docs:
        kept = [
            replace(t, provenance="synthetic-observed")
            for t in doc.labels
            if rng.random() < keep[t.relation - 1]
        ]
        out.append(replace(doc, labels=kept))
    return out


def _flip_noise(observed, oracle, noise_rate: float, num_relations: int, rng: np.random.Generator) -> list[Document]:
    """Drop observed triples and add false ones, each at ``noise_rate``."""
    if noise_rate <= 0:
        return [replace(d, labels=list(d.labels)) for d in observed]
    out = []
    for doc, truth in zip(observed, oracle):
        true_set = {(t.head, t.tail, t.relation) for t in truth.labels}
        kept = [t for t in doc.labels if rng.random() >= noise_rate]
        n_false = rng.binomial(max(len(doc.labels), 1), noise_rate)
        n = doc.num_entities
        added = []
        for _ in range(n_false):
            for _attempt in range(20):
                h = int(rng.integers(n))
                t = int(rng.integers(n))
                r = int(rng.integers(1, num_relations + 1))
                if h != t and (h, t, r) not in true_set:
                    added.append(RelationTriple(head=h, tail=t, relation=r, provenance="distant"))
                    break
        out.append(replace(doc, labels=kept + added))
    return out


def _realized_priors(observed, oracle, num_relations: int) -> ClassPriorTable:
    """Exact realized pi / pi_labeled by counting candidate pairs."""
    total = 0
    true_counts = np.zeros(num_relations, dtype=np.int64)
    obs_counts = np.zeros(num_relations, dtype=np.int64)
    for doc, truth in zip(observed, oracle):
        total += len(enumerate_pairs(doc))
        true_set = {(x.head, x.tail, x.relation) for x in truth.labels}
        for t in truth.labels:
            true_counts[t.relation - 1] += 1
        for t in doc.labels:
            if (t.head, t.tail, t.relation) in true_set:
                obs_counts[t.relation - 1] += 1
    pi = true_counts / total
    pi_labeled = np.minimum(obs_counts / total, pi)
    pi_u = np.array([prior_shift(float(p), float(pl)) for p, pl in zip(pi, pi_labeled)])
    return ClassPriorTable(pi=pi, pi_labeled=pi_labeled, pi_u=pi_u, n_p=obs_counts, n_u=total - obs_counts)


def synthesize_pu_corpus(cfg: SynthConfig) -> SynthResult:
    """Generate train/dev/test (and optional distant) splits with oracles.

    The same seed always yields bit-identical corpora. Observed labels
    are a subset of true labels unless flip noise is requested for the
    distant split.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    world = _World(cfg, rng)

    def make_split(count: int, split: str) -> list[Document]:
        return [_make_document(f"{split}{i:05d}", world, cfg, rng, split) for i in range(count)]

    train_oracle = make_split(cfg.num_train, "train")
    dev = make_split(cfg.num_dev, "dev")
    test = make_split(cfg.num_test, "test")
    train = _censor(train_oracle, cfg.keep_vector(), rng, cfg.censor_unit)
    priors_train = _realized_priors(train, train_oracle, cfg.num_relations)
    result = SynthResult(
        train=train,
        oracle=train_oracle,
        dev=dev,
        test=test,
        priors_train=priors_train,
    )
    if cfg.num_distant:
        distant_oracle = make_split(cfg.num_distant, "distant")
        censored = _censor(distant_oracle, cfg.distant_keep_vector(), rng, cfg.censor_unit)
        result.distant = _flip_noise(censored, distant_oracle, cfg.noise_rate, cfg.num_relations, rng)
        result.distant_oracle = distant_oracle
        result.priors_distant = _realized_priors(result.distant, distant_oracle, cfg.num_relations)
    return result


def drop_labels(docs, keep_fraction: float, seed: int) -> list[Document]:
    """Independently keep each labeled triple with the given probability."""
    if not (0.0 < keep_fraction <= 1.0):
        raise ConfigError("keep_fraction must be in (0, 1]")
    if keep_fraction == 1.0:
        return [replace(d, labels=list(d.labels)) for d in docs]
    rng = np.random.default_rng(seed)
    return [
        replace(d, labels=[t for t in d.labels if rng.random() < keep_fraction])
        for d in docs
    ]
