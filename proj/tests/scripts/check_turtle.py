"""Parses Turtle files with rdflib and compares each against an N-Triples twin.

usage: check_turtle.py DIR
Every DIR/*.ttl must parse and be isomorphic to DIR/*.nt when that exists.
Exit code 0 on success, 1 on any mismatch, 77 when rdflib is unavailable.
"""
import pathlib
import sys

try:
    from rdflib import Graph
    from rdflib.compare import to_isomorphic
except ImportError:
    sys.exit(77)


def main(root):
    failures = 0
    files = sorted(pathlib.Path(root).rglob("*.ttl"))
    for ttl in files:
        try:
            g = Graph().parse(ttl, format="turtle")
        except Exception as e:
            print(f"FAIL {ttl}: {e}")
            failures += 1
            continue
        nt = ttl.with_suffix(".nt")
        if nt.exists():
            ref = Graph().parse(nt, format="nt")
            if to_isomorphic(g) != to_isomorphic(ref):
                print(f"FAIL {ttl}: {len(g)} triples, reference has {len(ref)}")
                failures += 1
                continue
        print(f"ok {ttl} ({len(g)} triples)")
    if not files:
        print("no turtle files found")
        return 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1]))
