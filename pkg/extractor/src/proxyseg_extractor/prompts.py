"""Prompt template handling.

The default set is the 80 ImageNet prompt templates shipped with the
original CLIP release, vendored verbatim in templates_80.txt. Every
template contains one {} slot for the class name.
"""

from pathlib import Path

from .errors import ExtractorError

_DEFAULT_FILE = Path(__file__).parent / "templates_80.txt"


def load_templates(path=None):
    source = Path(path) if path else _DEFAULT_FILE
    templates = []
    for line in source.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "{}" not in line:
            raise ExtractorError(f"template {line!r} has no {{}} slot for the class name")
        templates.append(line)
    if not templates:
        raise ExtractorError(f"no templates found in {source}")
    return templates


def load_class_names(path):
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    if not names:
        raise ExtractorError(f"no class names found in {path}")
    return names
