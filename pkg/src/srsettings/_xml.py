"""Small XML helpers shared by the ADMX and XCCDF readers."""

from __future__ import annotations

import os
import re
import xml.etree.ElementTree as ET
from typing import Union

XmlSource = Union[bytes, str, os.PathLike]

_WS = re.compile(r"\s+")


class XmlParseError(ValueError):
    """Raised for documents that are not well-formed XML."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = f"{source}:" if source else ""
        where += f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


def read_bytes(source: XmlSource) -> tuple[bytes, str | None]:
    """Return raw bytes and a display name for ``source``.

    ``str`` values that look like markup are treated as documents, anything
    else as a filesystem path.
    """
    if isinstance(source, bytes):
        return source, None
    if isinstance(source, str) and source.lstrip().startswith("<"):
        return source.encode("utf-8"), None
    path = os.fspath(source)
    with open(path, "rb") as fh:
        return fh.read(), path


def source_name(source: XmlSource) -> str:
    if isinstance(source, bytes) or (isinstance(source, str) and source.lstrip().startswith("<")):
        return ""
    return os.fspath(source)


def _strip_utf8_declaration(text: str) -> str:
    return re.sub(r"^\s*<\?xml[^>]*\?>", "", text, count=1)


def parse_root(source: XmlSource) -> ET.Element:
    data, name = read_bytes(source)
    # expat sniffs UTF-16 BOMs itself; a UTF-8 BOM followed by a utf-16
    # declaration (seen in hand-edited templates) needs decoding first.
    try:
        if data.startswith(b"\xef\xbb\xbf"):
            root = ET.fromstring(_strip_utf8_declaration(data[3:].decode("utf-8")))
        else:
            root = ET.fromstring(data)
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else None
        raise XmlParseError(str(exc), line=line, source=name) from None
    return root


def local(tag: str) -> str:
    """Tag name without its ``{namespace}`` prefix."""
    return tag.rsplit("}", 1)[-1] if tag.startswith("{") else tag


def children(elem: ET.Element, name: str) -> list[ET.Element]:
    return [c for c in elem if isinstance(c.tag, str) and local(c.tag) == name]


def child(elem: ET.Element, name: str) -> ET.Element | None:
    for c in elem:
        if isinstance(c.tag, str) and local(c.tag) == name:
            return c
    return None


def collapse(text: str | None) -> str:
    return _WS.sub(" ", text or "").strip()


def text_of(elem: ET.Element | None) -> str:
    """All text below ``elem`` (XHTML markup flattened), whitespace collapsed."""
    if elem is None:
        return ""
    return collapse("".join(elem.itertext()))
