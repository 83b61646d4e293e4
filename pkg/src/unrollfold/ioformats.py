"""Readers and writers for CT, BPSEQ, FASTA and (extended) dot-bracket.

File formats count bases from 1; everything returned here is 0-based.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CANONICAL, RnaSequence

log = logging.getLogger(__name__)

BRACKETS = ("()", "[]", "{}", "<>")
STRUCTURE_SUFFIXES = {".ct": "ct", ".bpseq": "bpseq", ".dbn": "dbn", ".db": "dbn"}


class FormatError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class StructureRecord:
    seq: RnaSequence
    pairs: frozenset
    source: str = ""
    fmt: str = ""

    def __post_init__(self):
        L = len(self.seq)
        seen = set()
        for i, j in self.pairs:
            if not 0 <= i < j < L:
                raise FormatError(f"pair ({i}, {j}) out of range for length {L}")
            if i in seen or j in seen:
                raise FormatError(f"base in pair ({i}, {j}) is paired twice")
            seen.update((i, j))


# ------------------------------------------------------------------ tables

def _pairs_from_partner(partner: dict[int, int], L: int, lines: dict[int, int]) -> frozenset:
    pairs = set()
    for i, j in partner.items():
        if j == 0:
            continue
        if not 1 <= j <= L:
            raise FormatError(f"pair index {j} out of range 1..{L}", lines[i])
        back = partner.get(j, 0)
        if back != i:
            raise FormatError(f"base {i} pairs with {j} but {j} pairs with {back}", lines[i])
        if i == j:
            raise FormatError(f"base {i} pairs with itself", lines[i])
        pairs.add((min(i, j) - 1, max(i, j) - 1))
    return frozenset(pairs)


def _parse_table(text: str, ncols: int, pair_col: int, fmt: str, skip_header: bool):
    bases: dict[int, str] = {}
    partner: dict[int, int] = {}
    lines: dict[int, int] = {}
    ident = ""
    started = False
    header_len = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if not parts[0].lstrip("-").isdigit():
            if started:
                raise FormatError(f"expected an integer-led {fmt} line, got {line!r}", lineno)
            if not ident:
                ident = line.lstrip(">").strip()
            continue
        if skip_header and header_len is None:
            header_len = int(parts[0])
            ident = " ".join(parts[1:]) or ident
            continue
        started = True
        if len(parts) < ncols:
            raise FormatError(f"{fmt} line needs {ncols} fields, got {len(parts)}", lineno)
        try:
            idx, pj = int(parts[0]), int(parts[pair_col])
        except ValueError:
            raise FormatError(f"non-integer field in {line!r}", lineno) from None
        if idx in bases:
            raise FormatError(f"duplicate index {idx}", lineno)
        if len(parts[1]) != 1:
            raise FormatError(f"base field must be one symbol, got {parts[1]!r}", lineno)
        bases[idx] = parts[1].upper()
        partner[idx] = pj
        lines[idx] = lineno
    if not bases:
        raise FormatError(f"no {fmt} base lines found")
    L = len(bases)
    if sorted(bases) != list(range(1, L + 1)):
        missing = sorted(set(range(1, L + 1)) - set(bases))
        raise FormatError(f"indices are not 1..{L} (missing {missing[:5]})")
    if header_len is not None and header_len != L:
        raise FormatError(f"header declares {header_len} bases, found {L}")
    seq = "".join(bases[i] for i in range(1, L + 1)).replace("T", "U")
    pairs = _pairs_from_partner(partner, L, lines)
    return ident, seq, pairs


def parse_ct(text: str, source: str = "", family: str | None = None) -> StructureRecord:
    """Connectivity table: a length header, then ``idx base prev next pair idx`` lines.

    Non-numeric lines before the header (energy comments etc.) are skipped.
    """
    ident, seq, pairs = _parse_table(text, 5, 4, "CT", skip_header=True)
    return StructureRecord(RnaSequence(seq, ident, family), pairs, source, "ct")


def parse_bpseq(text: str, source: str = "", family: str | None = None) -> StructureRecord:
    ident, seq, pairs = _parse_table(text, 3, 2, "BPSEQ", skip_header=False)
    return StructureRecord(RnaSequence(seq, ident, family), pairs, source, "bpseq")


def _partner_array(rec: StructureRecord) -> np.ndarray:
    partner = np.zeros(len(rec.seq), dtype=int)
    for i, j in rec.pairs:
        partner[i], partner[j] = j + 1, i + 1
    return partner


def write_ct(rec: StructureRecord) -> str:
    L = len(rec.seq)
    partner = _partner_array(rec)
    out = [f"{L}\t{rec.seq.id or 'seq'}"]
    for i, b in enumerate(rec.seq.bases, start=1):
        nxt = i + 1 if i < L else 0
        out.append(f"{i}\t{b}\t{i - 1}\t{nxt}\t{partner[i - 1]}\t{i}")
    return "\n".join(out) + "\n"


def write_bpseq(rec: StructureRecord) -> str:
    partner = _partner_array(rec)
    out = [f"# {rec.seq.id}"] if rec.seq.id else []
    out += [f"{i} {b} {partner[i - 1]}" for i, b in enumerate(rec.seq.bases, start=1)]
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ dot-bracket

def _crosses(p, q):
    (i, j), (k, l) = sorted([p, q])
    return i < k < j < l


def to_dot_bracket(rec_or_pairs, L: int | None = None) -> str:
    """Dot-bracket with extra bracket kinds for crossing pairs.

    Pairs (sorted by opening base) go to the first layer ``() [] {} <>`` they
    do not cross.  Needing a fifth layer is an error.
    """
    if isinstance(rec_or_pairs, StructureRecord):
        pairs, L = rec_or_pairs.pairs, len(rec_or_pairs.seq)
    else:
        pairs = rec_or_pairs
        if L is None:
            raise ValueError("L is required when passing a bare pair set")
    layers: list[list] = []
    chars = ["."] * L
    for p in sorted(pairs):
        for depth, layer in enumerate(layers):
            if not any(_crosses(p, q) for q in layer):
                layer.append(p)
                break
        else:
            depth = len(layers)
            layers.append([p])
        if depth >= len(BRACKETS):
            raise FormatError(f"structure needs more than {len(BRACKETS)} bracket layers")
        chars[p[0]], chars[p[1]] = BRACKETS[depth]
    return "".join(chars)


def parse_dot_bracket(db: str) -> frozenset:
    openers = {o: c for o, c in BRACKETS}
    closers = {c: o for o, c in BRACKETS}
    stacks: dict[str, list[int]] = {o: [] for o in openers}
    pairs = set()
    for pos, ch in enumerate(db.strip()):
        if ch in openers:
            stacks[ch].append(pos)
        elif ch in closers:
            st = stacks[closers[ch]]
            if not st:
                raise FormatError(f"unbalanced {ch!r} at column {pos + 1}")
            pairs.add((st.pop(), pos))
        elif ch not in ".-_,:":
            raise FormatError(f"unknown dot-bracket symbol {ch!r} at column {pos + 1}")
    left = [o for o, st in stacks.items() if st]
    if left:
        raise FormatError(f"unclosed brackets {''.join(left)}")
    return frozenset(pairs)


def parse_dbn(text: str, source: str = "", family: str | None = None) -> StructureRecord:
    """Three-line dot-bracket record: optional ``>id``, sequence, structure."""
    lines = [l.strip() for l in text.splitlines() if l.strip() and not l.startswith("#")]
    ident = ""
    if lines and lines[0].startswith(">"):
        ident = lines.pop(0)[1:].strip()
    if len(lines) < 2:
        raise FormatError("dot-bracket record needs a sequence line and a structure line")
    seq, db = lines[0].upper().replace("T", "U"), lines[1].split()[0]
    if len(seq) != len(db):
        raise FormatError(f"sequence length {len(seq)} != structure length {len(db)}", 3 if ident else 2)
    return StructureRecord(RnaSequence(seq, ident, family), parse_dot_bracket(db), source, "dbn")


def write_dbn(rec: StructureRecord) -> str:
    return f">{rec.seq.id or 'seq'}\n{rec.seq.bases}\n{to_dot_bracket(rec)}\n"


# ------------------------------------------------------------------ FASTA

def parse_fasta(text: str) -> list[RnaSequence]:
    out = []
    ident, chunks, header_line = None, [], 0

    def flush():
        body = "".join(chunks).upper().replace("T", "U")
        if not body:
            raise FormatError(f"FASTA record {ident!r} has no sequence", header_line)
        out.append(RnaSequence(body, ident))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith(">"):
            if ident is not None:
                flush()
            ident, chunks, header_line = line[1:].strip(), [], lineno
        else:
            if ident is None:
                raise FormatError("sequence data before the first '>' header", lineno)
            if not line.replace("-", "").isalpha():
                raise FormatError(f"invalid sequence characters in {line!r}", lineno)
            chunks.append(line)
    if ident is not None:
        flush()
    return out


def write_fasta(seqs) -> str:
    return "".join(f">{s.id}\n{s.bases}\n" for s in seqs)


# ------------------------------------------------------------------ encodings

def one_hot(seq) -> np.ndarray:
    """``L x 4`` indicator matrix, columns ordered A, U, C, G; other symbols give a zero row."""
    bases = seq.bases if isinstance(seq, RnaSequence) else str(seq).upper()
    out = np.zeros((len(bases), 4))
    for i, b in enumerate(bases):
        col = CANONICAL.find(b)
        if col >= 0:
            out[i, col] = 1.0
    return out


# ------------------------------------------------------------------ files & datasets

PARSERS = {"ct": parse_ct, "bpseq": parse_bpseq, "dbn": parse_dbn}
WRITERS = {"ct": write_ct, "bpseq": write_bpseq, "dbn": write_dbn}


def format_of(path) -> str:
    fmt = STRUCTURE_SUFFIXES.get(Path(path).suffix.lower())
    if fmt is None:
        raise FormatError(f"unknown structure file type {Path(path).suffix!r}", path=str(path))
    return fmt


def read_structure(path, family: str | None = None) -> StructureRecord:
    path = Path(path)
    fmt = format_of(path)
    try:
        return PARSERS[fmt](path.read_text(), source=str(path), family=family)
    except FormatError as e:
        raise FormatError(str(e).lstrip(": "), e.line, str(path)) from None


@dataclass
class DatasetIndex:
    records: list[StructureRecord] = field(default_factory=list)
    family_counts: dict[str, int] = field(default_factory=dict)
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)

    def __len__(self):
        return len(self.records)


def scan_dataset(root) -> DatasetIndex:
    """Index every CT/BPSEQ/dot-bracket file under ``root``.

    The family is the name of the first directory below ``root`` (files at the
    top level get ``None``).  Records identical in sequence and pair set are
    kept once, first in sorted-path order.  Unreadable files are skipped with a
    warning and listed in ``skipped``.
    """
    root = Path(root)
    paths = sorted(p for p in root.rglob("*")
                   if p.is_file() and p.suffix.lower() in STRUCTURE_SUFFIXES)
    index = DatasetIndex()
    seen = set()
    for p in paths:
        rel = p.relative_to(root).parts
        family = rel[0] if len(rel) > 1 else None
        try:
            rec = read_structure(p, family=family)
        except (FormatError, OSError, UnicodeDecodeError) as e:
            log.warning("skipping %s: %s", p, e)
            index.skipped.append((str(p), str(e)))
            continue
        key = (rec.seq.bases, rec.pairs)
        if key in seen:
            continue
        seen.add(key)
        index.records.append(rec)
    index.family_counts = dict(Counter(r.seq.family or "unknown" for r in index.records))
    return index


def write_structure(rec: StructureRecord, path, fmt: str | None = None) -> None:
    fmt = fmt or format_of(path)
    Path(path).write_text(WRITERS[fmt](rec))

