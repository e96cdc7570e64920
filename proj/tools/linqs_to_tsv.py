#!/usr/bin/env python3
"""Convert a LINQS-style citation dataset (<name>.content, <name>.cites) into
the jsdmp dataset directory format.

    python3 tools/linqs_to_tsv.py cora/cora.content cora/cora.cites data/cora

<name>.content rows are "doc_id<TAB>w_1 ... w_D<TAB>label"; <name>.cites rows
are "cited<TAB>citing". Documents are numbered in file order and labels by
sorted class name. Citation rows that mention an unknown document are dropped
and counted on stderr.
"""

import argparse
import sys
from pathlib import Path


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("content", type=Path)
    ap.add_argument("cites", type=Path)
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    ids, rows, names = {}, [], []
    for line in args.content.read_text().splitlines():
        if not line.strip():
            continue
        fields = line.split()
        ids[fields[0]] = len(ids)
        rows.append(fields[1:-1])
        names.append(fields[-1])
    classes = {c: k for k, c in enumerate(sorted(set(names)))}
    dim = len(rows[0])
    if any(len(r) != dim for r in rows):
        sys.exit("rows of the content file differ in width")

    edges, dropped = [], 0
    for line in args.cites.read_text().splitlines():
        fields = line.split()
        if len(fields) != 2:
            continue
        if fields[0] in ids and fields[1] in ids:
            edges.append((ids[fields[1]], ids[fields[0]]))
        else:
            dropped += 1

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "manifest.tsv").write_text(f"{len(rows)}\t{dim}\t{len(classes)}\n")
    (args.out / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in edges))
    (args.out / "features.tsv").write_text("".join("\t".join(r) + "\n" for r in rows))
    (args.out / "labels.tsv").write_text("".join(f"{classes[c]}\n" for c in names))
    print(f"n {len(rows)}, D {dim}, C {len(classes)}, raw edges {len(edges)}, dropped {dropped}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
