"""HTML tokenization, forgiving DOM tree construction and node featurization.

The tokenizer and tree builder are total: any input string produces a valid
tree. They implement the small subset of HTML5 recovery that matters for
dataset landing pages (implied end tags, void elements, raw-text elements),
not the full parsing algorithm.
"""

from __future__ import annotations

import datetime as dt
import html as htmllib
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .patterns import DATE_FLAG_RE, DOI_RE, URL_RE


class TokenKind(str, Enum):
    START_TAG = "StartTag"
    END_TAG = "EndTag"
    SELF_CLOSING_TAG = "SelfClosingTag"
    TEXT = "Text"
    COMMENT = "Comment"
    DOCTYPE = "Doctype"


@dataclass(frozen=True)
class HtmlToken:
    kind: TokenKind
    name: str = ""
    attributes: tuple[tuple[str, str], ...] = ()
    text: str = ""
    span: tuple[int, int] = field(default=(0, 0), compare=False)

    def attr(self, name: str, default: str | None = None) -> str | None:
        for key, value in self.attributes:
            if key == name:
                return value
        return default


@dataclass
class RawDocument:
    source_id: str
    html: str
    url: str | None = None
    retrieved_at: dt.datetime | None = None

    @classmethod
    def from_bytes(cls, source_id: str, data: bytes, url: str | None = None,
                   retrieved_at: dt.datetime | None = None) -> RawDocument:
        return cls(source_id, data.decode("utf-8", errors="replace"), url, retrieved_at)


VOID_ELEMENTS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)
RAW_TEXT_ELEMENTS = frozenset({"script", "style"})
ESCAPABLE_RAW_TEXT_ELEMENTS = frozenset({"title", "textarea"})

_TAG_NAME_RE = re.compile(r"[A-Za-z][^\t\n\f\r />]*")
_ATTR_RE = re.compile(
    r"""([^\s"'>/=]+)(?:\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>"'=<`]+)))?"""
)
_WS_RE = re.compile(r"\s+")


def _finish_text(tokens: list[HtmlToken], src: str, start: int, end: int) -> None:
    if start >= end:
        return
    if tokens and tokens[-1].kind is TokenKind.TEXT and tokens[-1].span[1] == start:
        # merge with the previous text run so spans stay contiguous
        prev_start = tokens[-1].span[0]
        raw = src[prev_start:end]
        tokens[-1] = HtmlToken(TokenKind.TEXT, text=htmllib.unescape(raw), span=(prev_start, end))
    else:
        tokens.append(HtmlToken(TokenKind.TEXT, text=htmllib.unescape(src[start:end]), span=(start, end)))


def _parse_tag(src: str, pos: int) -> tuple[HtmlToken, int] | None:
    """Parse a start or end tag at ``src[pos] == '<'``; None when malformed."""
    n = len(src)
    is_end = src.startswith("</", pos)
    i = pos + (2 if is_end else 1)
    m = _TAG_NAME_RE.match(src, i)
    if not m:
        return None
    name = m.group(0).lower()
    i = m.end()
    attrs: dict[str, str] = {}
    self_closing = False
    while True:
        while i < n and src[i].isspace():
            i += 1
        if i >= n:
            return None
        if src[i] == ">":
            i += 1
            break
        if src.startswith("/>", i):
            self_closing = True
            i += 2
            break
        if src[i] == "/":
            i += 1
            continue
        am = _ATTR_RE.match(src, i)
        if not am or am.end() == i:
            i += 1
            continue
        key = am.group(1).lower()
        value = next((g for g in am.group(2, 3, 4) if g is not None), "")
        if key not in attrs:
            attrs[key] = htmllib.unescape(value)
        i = am.end()
    if is_end:
        return HtmlToken(TokenKind.END_TAG, name, span=(pos, i)), i
    kind = TokenKind.SELF_CLOSING_TAG if self_closing else TokenKind.START_TAG
    return HtmlToken(kind, name, tuple(attrs.items()), span=(pos, i)), i


def tokenize_html(src: str) -> list[HtmlToken]:
    """Split markup into tokens whose spans tile the input exactly.

    Anything that cannot be read as a tag, comment or doctype is kept as text.
    """
    tokens: list[HtmlToken] = []
    n = len(src)
    pos = 0
    text_start = 0
    while pos < n:
        lt = src.find("<", pos)
        if lt < 0:
            break
        if src.startswith("<!--", lt):
            close = src.find("-->", lt + 4)
            end = n if close < 0 else close + 3
            _finish_text(tokens, src, text_start, lt)
            body = src[lt + 4: close if close >= 0 else n]
            tokens.append(HtmlToken(TokenKind.COMMENT, text=body, span=(lt, end)))
            pos = text_start = end
            continue
        if src.startswith("<!", lt) or src.startswith("<?", lt):
            close = src.find(">", lt + 2)
            end = n if close < 0 else close + 1
            _finish_text(tokens, src, text_start, lt)
            body = src[lt + 2: close if close >= 0 else n]
            if body[:7].lower() == "doctype":
                tokens.append(HtmlToken(TokenKind.DOCTYPE, text=body[7:].strip(), span=(lt, end)))
            else:
                tokens.append(HtmlToken(TokenKind.COMMENT, text=body, span=(lt, end)))
            pos = text_start = end
            continue
        parsed = _parse_tag(src, lt)
        if parsed is None:
            pos = lt + 1
            continue
        tok, end = parsed
        _finish_text(tokens, src, text_start, lt)
        tokens.append(tok)
        pos = text_start = end
        if tok.kind is TokenKind.START_TAG and (
            tok.name in RAW_TEXT_ELEMENTS or tok.name in ESCAPABLE_RAW_TEXT_ELEMENTS
        ):
            m = re.compile(rf"</{tok.name}(?=[\s/>])", re.IGNORECASE).search(src, pos)
            stop = m.start() if m else n
            if stop > pos:
                raw = src[pos:stop]
                text = raw if tok.name in RAW_TEXT_ELEMENTS else htmllib.unescape(raw)
                tokens.append(HtmlToken(TokenKind.TEXT, text=text, span=(pos, stop)))
            pos = text_start = stop
    _finish_text(tokens, src, text_start, n)
    return tokens


# ---------------------------------------------------------------------------
# tree construction

@dataclass
class DomNode:
    node_id: int
    tag: str
    attributes: dict[str, str] = field(default_factory=dict)
    text: str = ""
    depth: int = 0
    parent: int | None = None
    children: list[int] = field(default_factory=list)

    @property
    def is_text(self) -> bool:
        return self.tag == TEXT_TAG


TEXT_TAG = "#text"
ROOT_TAG = "#document"

_P_CLOSERS = frozenset(
    "address article aside blockquote details div dl fieldset figcaption figure footer form "
    "h1 h2 h3 h4 h5 h6 header hr main menu nav ol p pre section table ul".split()
)
# start tag -> (elements it implicitly closes, elements that stop the search)
_IMPLIED_END = {
    "li": ({"li"}, {"ul", "ol", "menu"}),
    "dt": ({"dt", "dd"}, {"dl"}),
    "dd": ({"dt", "dd"}, {"dl"}),
    "tr": ({"tr", "td", "th"}, {"table", "tbody", "thead", "tfoot"}),
    "td": ({"td", "th"}, {"tr", "table"}),
    "th": ({"td", "th"}, {"tr", "table"}),
    "tbody": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "thead": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "tfoot": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "option": ({"option"}, {"select", "datalist"}),
    "optgroup": ({"option", "optgroup"}, {"select"}),
}
_P_SCOPE_STOP = frozenset({"table", "td", "th", "li", "dd", "dt", "button", "caption"})


class _Builder:
    __slots__ = ("tag", "attributes", "texts", "children")

    def __init__(self, tag: str, attributes: dict[str, str] | None = None, text: str = ""):
        self.tag = tag
        self.attributes = attributes or {}
        self.texts = [text] if text else []
        self.children: list[_Builder] = []


def _close_implied(stack: list[_Builder], name: str) -> None:
    if name in _P_CLOSERS:
        for i in range(len(stack) - 1, 0, -1):
            tag = stack[i].tag
            if tag == "p":
                del stack[i:]
                break
            if tag in _P_SCOPE_STOP:
                break
    rule = _IMPLIED_END.get(name)
    if rule is None:
        return
    targets, stops = rule
    cut = None
    for i in range(len(stack) - 1, 0, -1):
        tag = stack[i].tag
        if tag in stops:
            break
        if tag in targets:
            cut = i
    if cut is not None:
        del stack[cut:]


def build_dom_tree(tokens: list[HtmlToken]) -> list[DomNode]:
    """Build a tree from tokens, recovering from any malformation.

    Unclosed elements close at end of input, stray end tags are dropped,
    comments, doctypes and whitespace-only text are discarded and script/style
    bodies never become text. Node ids are assigned in pre-order.
    """
    doc = _Builder(ROOT_TAG)
    stack = [doc]
    for tok in tokens:
        kind = tok.kind
        if kind is TokenKind.TEXT:
            parent = stack[-1]
            if parent.tag in RAW_TEXT_ELEMENTS or not tok.text.strip():
                continue
            last = parent.children[-1] if parent.children else None
            if last is not None and last.tag == TEXT_TAG:
                last.texts.append(tok.text)
            else:
                parent.children.append(_Builder(TEXT_TAG, text=tok.text))
        elif kind is TokenKind.START_TAG or kind is TokenKind.SELF_CLOSING_TAG:
            _close_implied(stack, tok.name)
            node = _Builder(tok.name, dict(tok.attributes))
            stack[-1].children.append(node)
            if kind is TokenKind.START_TAG and tok.name not in VOID_ELEMENTS:
                stack.append(node)
        elif kind is TokenKind.END_TAG:
            for i in range(len(stack) - 1, 0, -1):
                if stack[i].tag == tok.name:
                    del stack[i:]
                    break

    top = doc.children
    root = top[0] if len(top) == 1 and top[0].tag != TEXT_TAG else doc

    nodes: list[DomNode] = []
    _visit_iterative(root, nodes)
    return nodes


def _visit_iterative(root: _Builder, nodes: list[DomNode]) -> None:
    stack: list[tuple[_Builder, int | None, int]] = [(root, None, 0)]
    while stack:
        b, parent, depth = stack.pop()
        node = DomNode(len(nodes), b.tag, b.attributes, "".join(b.texts), depth, parent)
        nodes.append(node)
        if parent is not None:
            nodes[parent].children.append(node.node_id)
        for child in reversed(b.children):
            stack.append((child, node.node_id, depth + 1))
    for node in nodes:
        if not node.is_text:
            node.text = "".join(nodes[c].text for c in node.children if nodes[c].is_text)


def parse_html(src: str) -> list[DomNode]:
    return build_dom_tree(tokenize_html(src))


def serialize(nodes: list[DomNode], node_id: int = 0) -> str:
    """Render a tree back to markup (normalized form, comments dropped)."""
    out: list[str] = []
    stack: list[tuple[int, bool]] = [(node_id, False)]
    while stack:
        nid, closing = stack.pop()
        node = nodes[nid]
        if node.is_text:
            out.append(htmllib.escape(node.text, quote=False))
            continue
        if node.tag == ROOT_TAG:
            stack.extend((c, False) for c in reversed(node.children))
            continue
        if closing:
            out.append(f"</{node.tag}>")
            continue
        attrs = "".join(f' {k}="{htmllib.escape(v)}"' for k, v in node.attributes.items())
        out.append(f"<{node.tag}{attrs}>")
        if node.tag in VOID_ELEMENTS:
            continue
        stack.append((nid, True))
        stack.extend((c, False) for c in reversed(node.children))
    return "".join(out)


def text_content(nodes: list[DomNode], node_id: int = 0) -> str:
    """All descendant text of a node, whitespace-collapsed."""
    parts: list[str] = []
    stack = [node_id]
    while stack:
        node = nodes[stack.pop()]
        if node.is_text:
            parts.append(node.text)
        stack.extend(reversed(node.children))
    return _WS_RE.sub(" ", " ".join(parts)).strip()


# ---------------------------------------------------------------------------
# features

DEFAULT_TAG_VOCABULARY = (
    "#document #text html head body title meta link div span p a h1 h2 h3 h4 h5 "
    "table thead tbody tr th td ul ol li dl dt dd section article header footer nav main "
    "aside strong em b i small time address code pre img br label form button input "
    "blockquote figure"
).split()
DEFAULT_ATTRIBUTE_KEYWORDS = [
    "title", "author", "date", "abstract", "keyword", "license", "doi",
    "creator", "publisher", "access", "spatial", "temporal",
]
TEXT_STAT_NAMES = ("length_bucket", "digit_ratio", "upper_ratio", "date_flag", "url_flag", "doi_flag")
LENGTH_BUCKETS = 10
SIBLING_CAP = 16


@dataclass(frozen=True)
class FeatureConfig:
    tag_vocabulary: tuple[str, ...] = tuple(DEFAULT_TAG_VOCABULARY)
    text_stat_count: int = len(TEXT_STAT_NAMES)
    attribute_keyword_list: tuple[str, ...] = tuple(DEFAULT_ATTRIBUTE_KEYWORDS)

    def __post_init__(self):
        if not 0 <= self.text_stat_count <= len(TEXT_STAT_NAMES):
            raise ValueError(
                f"text_stat_count must be in [0, {len(TEXT_STAT_NAMES)}], got {self.text_stat_count}"
            )

    @property
    def feature_dim(self) -> int:
        return len(self.tag_vocabulary) + 1 + self.text_stat_count + len(self.attribute_keyword_list) + 2

    def dumps(self) -> str:
        return (
            f"feature_dim={self.feature_dim}\n"
            f"tag_vocabulary={','.join(self.tag_vocabulary)}\n"
            f"text_stat_count={self.text_stat_count}\n"
            f"attribute_keyword_list={','.join(self.attribute_keyword_list)}\n"
        )

    @classmethod
    def loads(cls, text: str) -> FeatureConfig:
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"feature config line {lineno}: expected key=value, got {line!r}")
            values[key.strip()] = value.strip()
        try:
            cfg = cls(
                tuple(filter(None, values["tag_vocabulary"].split(","))),
                int(values["text_stat_count"]),
                tuple(filter(None, values["attribute_keyword_list"].split(","))),
            )
        except KeyError as exc:
            raise ValueError(f"feature config missing key {exc.args[0]!r}") from None
        if "feature_dim" in values and int(values["feature_dim"]) != cfg.feature_dim:
            raise ValueError(
                f"feature config declares feature_dim={values['feature_dim']} "
                f"but its fields give {cfg.feature_dim}"
            )
        return cfg

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> FeatureConfig:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def text_statistics(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return [0.0] * len(TEXT_STAT_NAMES)
    n = len(text)
    bucket = min(LENGTH_BUCKETS, math.floor(math.log2(n + 1))) / LENGTH_BUCKETS
    digits = sum(c.isdigit() for c in text) / n
    upper = sum(c.isupper() for c in text) / n
    return [
        bucket,
        digits,
        upper,
        float(bool(DATE_FLAG_RE.search(text))),
        float(bool(URL_RE.search(text))),
        float(bool(DOI_RE.search(text))),
    ]


def featurize(nodes: list[DomNode], config: FeatureConfig) -> np.ndarray:
    """Encode every node as a row of values in [0, 1]."""
    vocab = {tag: i for i, tag in enumerate(config.tag_vocabulary)}
    n_tags = len(vocab) + 1
    n_stats = config.text_stat_count
    keywords = config.attribute_keyword_list
    x = np.zeros((len(nodes), config.feature_dim), dtype=np.float64)
    max_depth = max((node.depth for node in nodes), default=0)
    sibling_index = {c: i for node in nodes for i, c in enumerate(node.children)}
    for node in nodes:
        row = x[node.node_id]
        row[vocab.get(node.tag, len(vocab))] = 1.0
        col = n_tags
        if n_stats:
            row[col:col + n_stats] = text_statistics(node.text)[:n_stats]
        col += n_stats
        cues = f"{node.attributes.get('class', '')} {node.attributes.get('id', '')}".lower()
        for j, word in enumerate(keywords):
            if word in cues:
                row[col + j] = 1.0
        col += len(keywords)
        row[col] = node.depth / max_depth if max_depth else 0.0
        index = sibling_index.get(node.node_id, 0)
        row[col + 1] = min(index, SIBLING_CAP) / SIBLING_CAP
    return x


@dataclass
class DomGraph:
    nodes: list[DomNode]
    edge_list: list[tuple[int, int]]
    feature_matrix: np.ndarray
    source_id: str = ""

    @property
    def feature_dim(self) -> int:
        return self.feature_matrix.shape[1]

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


def build_graph(html: str, config: FeatureConfig, source_id: str = "") -> DomGraph:
    nodes = parse_html(html)
    edges = [(node.parent, node.node_id) for node in nodes if node.parent is not None]
    return DomGraph(nodes, edges, featurize(nodes, config), source_id)
