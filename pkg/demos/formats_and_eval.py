"""
Files in, files out
===================

Write one pseudoknotted structure as CT, BPSEQ and dot-bracket, read each
back, then score a slightly wrong prediction with and without the
one-position shift allowance.
"""

from unrollfold import RnaSequence, StructureRecord
from unrollfold import ioformats as io
from unrollfold.evaluation import prf

seq = RnaSequence("GGGAAACCCAGGGAAAUCCCUU", "knot")
pairs = {(0, 8), (1, 7), (4, 13), (5, 12), (10, 19), (11, 18)}
rec = StructureRecord(seq, pairs)

for fmt in ("ct", "bpseq", "dbn"):
    text = io.WRITERS[fmt](rec)
    back = io.PARSERS[fmt](text)
    print(f"--- {fmt}: round trip ok = {back.pairs == pairs}")
    lines = text.splitlines()
    print("\n".join(lines[:5]) + ("\n..." if len(lines) > 5 else ""))

# malformed input points at the offending line
try:
    io.parse_bpseq("1 G 3\n2 A 0\n3 C 0\n")
except io.FormatError as e:
    print("rejected:", e)

# a prediction that is off by one on a single pair
pred = (pairs - {(10, 19)}) | {(9, 19)}
print("exact   P/R/F1", prf(pred, pairs))
print("shifted P/R/F1", prf(pred, pairs, shift=True))
