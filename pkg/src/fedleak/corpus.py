"""Annotated corpora: documents, PII spans, ingestion, concatenation.

The interchange format is UTF-8 JSONL, one document per line::

    {"doc_id": str, "text": str, "task_tag": str|null,
     "pii": [{"start_char": int, "end_char": int,
              "major": str, "minor": str}]}

PII char offsets index into ``text``; token offsets are derived at ingest
so the file format stays independent of the tokenizer. A pii record may
carry an optional ``surface`` (string or token list) which is verified
against the covered tokens, and ``masked: true`` for sanitized corpora
(then ``surface`` records the original tokens, which no longer appear in
the text).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import AnnotationError, ConfigurationError, ParseError
from .tokenizers import Tokenizer, resolve_tokenizer

# Reserved document separator. Multi-codepoint, so it can never collide
# with a codepoint token; train() rejects corpora that contain it as a
# whitespace token.
BOUNDARY_TOKEN = "<|doc|>"

# Label taxonomy: 7 major categories, 36 minor ones.
PII_TAXONOMY: dict[str, tuple[str, ...]] = {
    "Basic": (
        "Name",
        "Birthday",
        "Address",
        "Gender",
        "Ethnicity",
        "Family Relationship",
        "Age",
        "Nationality",
        "Personal Phone Number",
    ),
    "Identity": (
        "ID Number",
        "Social Security Number",
        "Driver's License Number",
        "Employee Number",
        "License Plate Number",
    ),
    "Health": (
        "Physical Condition",
        "Fertility Information",
        "Current Medical History",
        "Diagnosis and Treatment Status",
        "Other Medication Record",
    ),
    "Work and Education": (
        "Workplace",
        "Position",
        "Work Experience",
        "Education Experience",
        "Grades",
    ),
    "Property": (
        "Bank Account",
        "Amount of Funds",
        "Fund Flow Records",
        "Virtual Assets",
        "Other Financial Records",
    ),
    "Location": (
        "Precise Location",
        "Accommodation Information",
        "Travel Trajectory",
    ),
    "Others": (
        "Marital History",
        "Religious or Philosophical Beliefs",
        "Sexual Orientation or Sex Life",
        "Unpublished Criminal Records",
    ),
}


def validate_label(major: str, minor: str) -> None:
    minors = PII_TAXONOMY.get(major)
    if minors is None:
        raise AnnotationError(f"unknown major PII category: {major!r}")
    if minor not in minors:
        raise AnnotationError(
            f"minor category {minor!r} is not a subcategory of {major!r}"
        )


@dataclass(frozen=True)
class PiiSpan:
    """One annotated PII occurrence, in token coordinates."""

    doc_id: str
    start: int  # token index, inclusive
    end: int    # token index, exclusive
    major: str
    minor: str
    surface: tuple[str, ...]
    masked: bool = False


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    tokens: tuple[str, ...]
    task_tag: str | None = None


@dataclass
class AnnotatedCorpus:
    """Documents plus their PII spans; document order is significant."""

    documents: list[Document]
    spans: list[PiiSpan]
    owner: str
    tokenizer: str  # "codepoint" or "whitespace"

    def __post_init__(self) -> None:
        self._by_doc: dict[str, list[PiiSpan]] | None = None

    @property
    def tok(self) -> Tokenizer:
        return Tokenizer(self.tokenizer)

    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.documents]

    def spans_for(self, doc_id: str) -> list[PiiSpan]:
        if self._by_doc is None:
            by_doc: dict[str, list[PiiSpan]] = {}
            for span in self.spans:
                by_doc.setdefault(span.doc_id, []).append(span)
            self._by_doc = by_doc
        return self._by_doc.get(doc_id, [])

    def token_count(self) -> int:
        return sum(len(d.tokens) for d in self.documents)

    def pii_surfaces(self) -> list[tuple[str, ...]]:
        """All span surfaces in corpus order (multiset: one per occurrence)."""
        return [s.surface for s in self.spans]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnnotatedCorpus):
            return NotImplemented
        return (
            self.documents == other.documents
            and self.spans == other.spans
            and self.owner == other.owner
            and self.tokenizer == other.tokenizer
        )


@dataclass(frozen=True)
class PiiOccurrence:
    """A span occurrence located within a concatenated token stream."""

    loc: int  # index of the span's first token in the stream
    span: PiiSpan


@dataclass
class TokenStream:
    """Concatenation of a corpus's documents with located PII occurrences."""

    tokens: list[str]
    occurrences: list[PiiOccurrence]
    boundary: str | None = None


def _check_span_fields(rec: dict, line_no: int) -> None:
    for key in ("start_char", "end_char", "major", "minor"):
        if key not in rec:
            raise ParseError(f"pii record missing {key!r}", line_no)


def _derive_span(
    doc: Document,
    rec: dict,
    tok: Tokenizer,
    char_starts: dict[int, int],
    char_ends: dict[int, int],
    line_no: int,
) -> PiiSpan:
    start_char, end_char = rec["start_char"], rec["end_char"]
    if not (
        isinstance(start_char, int)
        and isinstance(end_char, int)
        and 0 <= start_char < end_char <= len(doc.text)
    ):
        raise AnnotationError(
            f"doc {doc.doc_id!r}: span chars [{start_char}, {end_char}) out of range"
        )
    if start_char not in char_starts or end_char not in char_ends:
        raise AnnotationError(
            f"doc {doc.doc_id!r}: span chars [{start_char}, {end_char}) "
            "do not align with token boundaries"
        )
    start, end = char_starts[start_char], char_ends[end_char]
    covered = doc.tokens[start:end]
    masked = bool(rec.get("masked", False))
    declared = rec.get("surface")
    if declared is not None:
        surface = (
            tuple(declared)
            if isinstance(declared, list)
            else tuple(tok.tokenize(declared))
        )
        if not masked and surface != covered:
            raise AnnotationError(
                f"doc {doc.doc_id!r}: span [{start}, {end}) surface "
                f"{surface!r} disagrees with covered tokens {covered!r}"
            )
    else:
        if masked:
            raise AnnotationError(
                f"doc {doc.doc_id!r}: masked span [{start}, {end}) "
                "requires an explicit surface"
            )
        surface = covered
    validate_label(rec["major"], rec["minor"])
    return PiiSpan(
        doc_id=doc.doc_id,
        start=start,
        end=end,
        major=rec["major"],
        minor=rec["minor"],
        surface=surface,
        masked=masked,
    )


def ingest(
    path: str | Path, tokenizer: str = "auto", owner: str | None = None
) -> AnnotatedCorpus:
    """Load a JSONL corpus, recomputing token offsets for every span."""
    path = Path(path)
    records: list[tuple[int, dict]] = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            if not isinstance(rec, dict):
                raise ParseError("document record must be an object", line_no)
            for key, typ in (("doc_id", str), ("text", str)):
                if not isinstance(rec.get(key), typ):
                    raise ParseError(f"missing or invalid {key!r}", line_no)
            records.append((line_no, rec))

    tok = resolve_tokenizer(tokenizer, (rec["text"] for _, rec in records))
    documents: list[Document] = []
    spans: list[PiiSpan] = []
    seen_ids: set[str] = set()
    for line_no, rec in records:
        doc_id = rec["doc_id"]
        if doc_id in seen_ids:
            raise ParseError(f"duplicate doc_id {doc_id!r}", line_no)
        seen_ids.add(doc_id)
        text = rec["text"]
        doc = Document(
            doc_id=doc_id,
            text=text,
            tokens=tuple(tok.tokenize(text)),
            task_tag=rec.get("task_tag"),
        )
        token_spans = tok.token_spans(text)
        char_starts = {s: i for i, (s, _) in enumerate(token_spans)}
        char_ends = {e: i + 1 for i, (_, e) in enumerate(token_spans)}
        pii = rec.get("pii", [])
        if not isinstance(pii, list):
            raise ParseError("'pii' must be a list", line_no)
        for span_rec in pii:
            _check_span_fields(span_rec, line_no)
            spans.append(
                _derive_span(doc, span_rec, tok, char_starts, char_ends, line_no)
            )
        documents.append(doc)

    return AnnotatedCorpus(
        documents=documents,
        spans=spans,
        owner=owner if owner is not None else path.stem,
        tokenizer=tok.mode,
    )


def emit(corpus: AnnotatedCorpus, path: str | Path) -> None:
    """Write a corpus back to the JSONL interchange format."""
    tok = corpus.tok
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            token_spans = tok.token_spans(doc.text)
            pii = []
            for span in corpus.spans_for(doc.doc_id):
                rec: dict = {
                    "start_char": token_spans[span.start][0],
                    "end_char": token_spans[span.end - 1][1],
                    "major": span.major,
                    "minor": span.minor,
                }
                if span.masked:
                    rec["masked"] = True
                    rec["surface"] = list(span.surface)
                pii.append(rec)
            line = {
                "doc_id": doc.doc_id,
                "text": doc.text,
                "task_tag": doc.task_tag,
                "pii": pii,
            }
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")


def concatenate(
    corpus: AnnotatedCorpus, boundary: str | None = None
) -> TokenStream:
    """Concatenate documents into one token sequence with PII locations.

    With ``boundary`` set, the separator token is appended after every
    document, so n-gram windows and prefix windows can detect document
    edges. Every span occurrence yields exactly one location (multiset
    semantics: repeated surfaces keep separate entries).
    """
    if not corpus.documents:
        raise ConfigurationError("cannot concatenate an empty corpus")
    tokens: list[str] = []
    occurrences: list[PiiOccurrence] = []
    for doc in corpus.documents:
        offset = len(tokens)
        tokens.extend(doc.tokens)
        for span in sorted(corpus.spans_for(doc.doc_id), key=lambda s: (s.start, s.end)):
            occurrences.append(PiiOccurrence(loc=offset + span.start, span=span))
        if boundary is not None:
            tokens.append(boundary)
    return TokenStream(tokens=tokens, occurrences=occurrences, boundary=boundary)
