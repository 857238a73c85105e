"""Regenerate the bundled parity-check matrices."""
from pathlib import Path

from uraccess.ldpc import construct_code, format_alist

OUT = Path(__file__).resolve().parents[1] / "src" / "uraccess" / "codes"

for n, k in [(400, 100), (200, 100), (128, 64), (32, 16)]:
    pcm = construct_code(n, k, col_degree=3, seed=n)
    (OUT / f"ldpc_{n}_{k}.alist").write_text(format_alist(pcm))
    print(pcm.name, "rows", sorted(set(pcm.row_degrees.tolist())))
