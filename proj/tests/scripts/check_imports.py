"""Cross-checks generated import cells against Python's own parser.

usage: check_imports.py FILE
FILE holds a JSON list of {"source": str, "imports": [str]}; every source must
parse and its absolute imports (top-level package only) must equal "imports".
"""
import ast
import json
import sys


def top_level_imports(source):
    found = set()
    for node in ast.walk(ast.parse(source)):
        if isinstance(node, ast.Import):
            found.update(alias.name.split(".")[0] for alias in node.names)
        elif isinstance(node, ast.ImportFrom) and node.level == 0 and node.module:
            found.add(node.module.split(".")[0])
    return found


def main(path):
    with open(path, encoding="utf-8") as f:
        cells = json.load(f)
    bad = 0
    for i, cell in enumerate(cells):
        try:
            got = top_level_imports(cell["source"])
        except SyntaxError as e:
            print(f"cell {i}: not valid Python: {e}\n{cell['source']}")
            bad += 1
            continue
        if got != set(cell["imports"]):
            print(f"cell {i}: ast {sorted(got)} != generator {sorted(cell['imports'])}\n{cell['source']}")
            bad += 1
    print(f"{len(cells) - bad}/{len(cells)} cells agree")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1]))
