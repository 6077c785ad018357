import sys
import traceback
from importlib import import_module
from pathlib import Path

PACKAGE = "nv_transparent"


def _module_name(file: Path) -> str:
    parts = file.with_suffix("").parts
    return ".".join(parts[parts.index(PACKAGE) :])


if __name__ == "__main__":
    files = [Path(f) for f in sys.argv[1:]] or sorted(Path(PACKAGE).glob("*.py"))
    has_failure = False
    for file in files:
        if file.name == "__main__.py":
            continue
        try:
            import_module(_module_name(file.resolve()))
        except Exception:
            has_failure = True
            print(file)  # noqa: T201
            traceback.print_exc()
            print()  # noqa: T201

    sys.exit(1 if has_failure else 0)
