"""Offline web ingestion: DOM snapshots -> WebPage/WebElement nodes and interaction edges."""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urldefrag, urljoin, urlparse

from bs4 import BeautifulSoup, Tag

from ..embed import Embedder, HashingEmbedder
from ..errors import GatewayError, SnapshotParseError
from ..graph import DEFAULT_DIMENSION, Graph, Node, NodeKind

logger = logging.getLogger(__name__)

_META_REQUIRED = {"url", "title", "fetched_at"}
_META_ALLOWED = _META_REQUIRED | {"website_type"}
_IDENT = re.compile(r"^[A-Za-z][A-Za-z0-9_-]*$")
_FILTER_WORDS = ("filter", "sort", "category", "genre", "type", "price", "year", "lang", "subject", "format")
_TEXT_INPUT_TYPES = {"", "text", "search", "email", "tel", "url", "number", "password", "date"}
_NON_DATA_CHILDREN = {"option", "br", "input", "button", "a", "script", "style", "source", "meta"}
SEED_TEXT_LIMIT = 300


@dataclass
class PageSnapshot:
    url: str
    title: str
    html: bytes
    screenshot_ref: str | None = None
    fetched_at: str = ""
    website_type: str = ""
    source: str = ""


@dataclass
class WebElementRecord:
    selector: str
    tag: str
    kind: str
    text: str
    attrs: dict[str, str] = field(default_factory=dict)
    element: Tag | None = field(default=None, repr=False, compare=False)


def load_snapshot(directory: str | Path) -> PageSnapshot:
    """Read ``page.html`` + ``meta.json`` (+ optional ``screenshot.png``) from one page directory."""
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    missing = _META_REQUIRED - meta.keys()
    unknown = meta.keys() - _META_ALLOWED
    if missing or unknown:
        raise SnapshotParseError(
            f"{directory}/meta.json: missing {sorted(missing)}, unknown {sorted(unknown)}"
        )
    shot = directory / "screenshot.png"
    return PageSnapshot(
        url=meta["url"],
        title=meta["title"],
        html=(directory / "page.html").read_bytes(),
        screenshot_ref=str(shot) if shot.exists() else None,
        fetched_at=str(meta["fetched_at"]),
        website_type=str(meta.get("website_type", "")),
        source=directory.name,
    )


def load_snapshots(directory: str | Path) -> list[PageSnapshot]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"snapshot directory {root} does not exist")
    snaps = [load_snapshot(p) for p in sorted(root.iterdir()) if (p / "meta.json").exists()]
    urls = [s.url for s in snaps]
    if len(set(urls)) != len(urls):
        raise SnapshotParseError("snapshot urls must be unique within a corpus")
    return sorted(snaps, key=lambda s: s.url)


def decode_html(html: bytes) -> str:
    try:
        return html.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SnapshotParseError("page markup is not valid UTF-8", exc.start) from exc


def parse_html(html: bytes | str) -> BeautifulSoup:
    text = decode_html(html) if isinstance(html, bytes) else html
    return BeautifulSoup(text, "html.parser")


# -- classification ------------------------------------------------------------


def _classes(tag: Tag) -> list[str]:
    value = tag.get("class") or []
    return value if isinstance(value, list) else str(value).split()


def _attr(tag: Tag, name: str) -> str:
    value = tag.get(name)
    if value is None:
        return ""
    return " ".join(value) if isinstance(value, list) else str(value)


def _is_navigation(tag: Tag) -> bool:
    return tag.name == "nav" or _attr(tag, "role") == "navigation"


def _label_text(tag: Tag) -> str:
    bits = [_attr(tag, "name"), _attr(tag, "id"), _attr(tag, "aria-label")]
    ident = _attr(tag, "id")
    if ident:
        root = tag
        while root.parent is not None:
            root = root.parent
        label = root.find("label", attrs={"for": ident})
        if label is not None:
            bits.append(label.get_text(" ", strip=True))
    parent = tag.find_parent("label")
    if parent is not None:
        bits.append(parent.get_text(" ", strip=True))
    fieldset = tag.find_parent("fieldset")
    if fieldset is not None and fieldset.legend is not None:
        bits.append(fieldset.legend.get_text(" ", strip=True))
    return " ".join(bits).lower()


def _data_containers(body: Tag) -> tuple[set[int], set[int]]:
    """ids() of business-data containers and of their repeated result-item children."""
    containers: set[int] = set()
    items: set[int] = set()
    for tag in body.find_all(True):
        if tag.name in ("select", "form", "script", "style", "head") or _is_navigation(tag):
            continue
        if tag.find_parent(_is_navigation) is not None:
            continue
        groups: dict[tuple, list[Tag]] = {}
        for child in tag.find_all(True, recursive=False):
            if child.name in _NON_DATA_CHILDREN or not child.get_text(strip=True):
                continue
            groups.setdefault((child.name, tuple(sorted(_classes(child)))), []).append(child)
        repeated = [g for g in groups.values() if len(g) >= 3]
        if repeated:
            containers.add(id(tag))
            for group in repeated:
                items.update(id(c) for c in group)
    return containers, items


def classify_element(tag: Tag, containers: set[int] = frozenset(), items: set[int] = frozenset()) -> str | None:
    """Element kind for a tag per the classification table, or None if not of interest."""
    name = tag.name
    role = _attr(tag, "role").lower()
    classes = " ".join(_classes(tag)).lower()
    input_type = _attr(tag, "type").lower()
    if name == "form":
        return "form"
    if _is_navigation(tag):
        return "navigation"
    if role in ("dialog", "alertdialog") or "modal" in classes:
        return "modal"
    if tag.get("aria-live") is not None or "toast" in classes:
        return "toast"
    if id(tag) in containers:
        return "business_data"
    if id(tag) in items:
        return "result_item"
    if name == "button" or role == "button" or (name == "input" and input_type in ("submit", "button", "reset", "image")):
        return "button"
    if name == "input" and input_type == "hidden":
        return None
    ident = f"{_attr(tag, 'name')} {_attr(tag, 'id')}".lower().split()
    if role == "searchbox" or (
        name == "input"
        and input_type in _TEXT_INPUT_TYPES
        and (input_type == "search" or "q" in ident or any("search" in w for w in ident))
    ):
        return "search_box"
    if name == "select":
        return "filter"
    if name == "input" and input_type in ("checkbox", "radio"):
        label = _label_text(tag)
        return "filter" if any(w in label for w in _FILTER_WORDS) else "input"
    if name in ("input", "textarea"):
        return "input"
    if name == "a" and tag.get("href") is not None:
        return "link"
    return None


def css_selector(tag: Tag) -> str:
    """Stable selector: ``#id`` when the id is unique, else an nth-of-type chain."""
    root = tag
    while root.parent is not None:
        root = root.parent

    def unique_id(node: Tag) -> str | None:
        ident = _attr(node, "id")
        if ident and _IDENT.match(ident) and len(root.find_all(id=ident)) == 1:
            return ident
        return None

    parts: list[str] = []
    node: Tag | None = tag
    while node is not None and node.name != "[document]":
        ident = unique_id(node)
        if ident:
            parts.append(f"#{ident}")
            break
        index = 1 + sum(1 for s in node.previous_siblings if isinstance(s, Tag) and s.name == node.name)
        parts.append(f"{node.name}:nth-of-type({index})")
        node = node.parent
    return " > ".join(reversed(parts))


def resolve_selector(soup: BeautifulSoup, selector: str) -> Tag | None:
    """The unique element matching ``selector``, or None when zero or several match."""
    hits = soup.select(selector)
    return hits[0] if len(hits) == 1 else None


def _element_text(tag: Tag) -> str:
    if tag.name in ("input", "textarea", "select"):
        for key in ("placeholder", "aria-label", "value", "title", "name"):
            if _attr(tag, key):
                text = _attr(tag, key)
                break
        else:
            text = ""
        if tag.name == "select":
            options = [o.get_text(" ", strip=True) for o in tag.find_all("option")]
            text = " ".join(p for p in (text, " / ".join(options)) if p)
        return text
    text = " ".join(tag.get_text(" ", strip=True).split())
    if not text:
        text = _attr(tag, "aria-label") or _attr(tag, "title") or _attr(tag, "value")
    return text[:SEED_TEXT_LIMIT]


def parse_snapshot(
    snapshot: PageSnapshot, embedder: Embedder | None = None
) -> tuple[Node, list[WebElementRecord]]:
    """One WebPage node plus a record per element of interest, in document order."""
    soup = parse_html(snapshot.html)
    embedder = embedder or HashingEmbedder(DEFAULT_DIMENSION)
    page = Node(
        id=page_node_id(snapshot.url),
        kind=NodeKind("WebPage"),
        text=snapshot.title,
        embedding=embedder.embed(snapshot.title),
        metadata={
            "url": snapshot.url,
            "title": snapshot.title,
            "fetched_at": snapshot.fetched_at,
            "website_type": snapshot.website_type,
            **({"screenshot": snapshot.screenshot_ref} if snapshot.screenshot_ref else {}),
        },
        source_path=snapshot.source or snapshot.url,
        contextual_path=(snapshot.title,),
    )
    body = soup.body
    if body is None:
        return page, []
    containers, items = _data_containers(body)
    records = []
    for tag in body.find_all(True):
        kind = classify_element(tag, containers, items)
        if kind is None:
            continue
        attrs = {k: _attr(tag, k) for k in sorted(tag.attrs)}
        records.append(WebElementRecord(css_selector(tag), tag.name, kind, _element_text(tag), attrs, tag))
    return page, records


def page_node_id(url: str) -> str:
    return f"page:{url}"


def normalize_url(url: str) -> str:
    url, _ = urldefrag(url)
    parsed = urlparse(url)
    path = parsed.path.rstrip("/") or "/"
    return parsed._replace(path=path, scheme=parsed.scheme.lower(), netloc=parsed.netloc.lower()).geturl()


def _ancestor_labels(tag: Tag) -> list[str]:
    labels = []
    for parent in tag.parents:
        if parent.name in ("[document]", "html"):
            break
        ident = _attr(parent, "id")
        labels.append(f"{parent.name}#{ident}" if ident else parent.name)
    return list(reversed(labels))


def _sibling_anchor(tag: Tag) -> tuple[Tag, Tag]:
    """Climb single-child ancestors; return (container, climbed node)."""
    node = tag
    while node.parent is not None and len(node.parent.find_all(True, recursive=False)) == 1:
        node = node.parent
    return node.parent, node


def build_web_graph(
    snapshots: Sequence[PageSnapshot],
    embedder: Embedder,
    graph: Graph | None = None,
    report: list[str] | None = None,
) -> Graph:
    """Add page/element nodes and the web edge set for every snapshot."""
    graph = Graph(getattr(embedder, "dimension", DEFAULT_DIMENSION)) if graph is None else graph
    snapshots = sorted(snapshots, key=lambda s: s.url)
    url_to_page = {normalize_url(s.url): page_node_id(s.url) for s in snapshots}
    pending_nav: list[tuple[str, str, str]] = []

    for snap in snapshots:
        page, records = parse_snapshot(snap, embedder)
        graph.add_node(page)
        ids: dict[int, str] = {}
        by_kind: dict[str, list[tuple[WebElementRecord, str]]] = {}
        for i, rec in enumerate(records):
            nid = f"{page.id}::e{i:03d}"
            ids[id(rec.element)] = nid
            meta = {"selector": rec.selector, "tag": rec.tag, "url": snap.url}
            if rec.tag == "a" and "href" in rec.attrs:
                meta["href"] = urljoin(snap.url, rec.attrs["href"])
            if rec.tag == "select":
                options = [o.get_text(" ", strip=True) for o in rec.element.find_all("option")]
                meta["options"] = json.dumps(options, ensure_ascii=False)
            elif rec.tag == "input" and rec.kind == "filter":
                meta["options"] = json.dumps([_label_text(rec.element) or rec.attrs.get("value", "on")])
            for key, value in rec.attrs.items():
                meta[f"attr.{key}"] = value
            graph.add_node(
                Node(
                    nid,
                    NodeKind.element(rec.kind),
                    rec.text,
                    embedder.embed(rec.text),
                    meta,
                    page.source_path,
                    (snap.title, *_ancestor_labels(rec.element)),
                )
            )
            graph.add_edge(page.id, nid, "contains")
            by_kind.setdefault(rec.kind, []).append((rec, nid))

        def owner(tag: Tag, kinds: tuple[str, ...]) -> str | None:
            for parent in tag.parents:
                nid = ids.get(id(parent))
                if nid is not None and graph.node(nid).kind.element_kind in kinds:
                    return nid
            return None

        # navigation between corpus pages
        for rec, nid in by_kind.get("link", []):
            href = graph.node(nid).metadata.get("href", "")
            target = url_to_page.get(normalize_url(href)) if href else None
            if target is None:
                logger.debug("dangling link %s on %s", href, snap.url)
                if report is not None and href and not href.startswith(("mailto:", "javascript:")):
                    report.append(f"{snap.url}: no snapshot for {href}")
            elif target != page.id:
                pending_nav.append((nid, target, href))

        # form membership
        submit_of_form: dict[str, str] = {}
        for kind in ("input", "search_box", "filter", "button"):
            for rec, nid in by_kind.get(kind, []):
                form = owner(rec.element, ("form",))
                if form is None:
                    continue
                if kind == "button" and rec.attrs.get("type", "submit").lower() in ("button", "reset"):
                    continue
                graph.add_edge(nid, form, "form_submit")
                if kind == "button":
                    submit_of_form.setdefault(form, nid)

        # buttons opening modals / toasts
        overlay_by_id = {}
        for kind in ("modal", "toast"):
            for rec, nid in by_kind.get(kind, []):
                if rec.attrs.get("id"):
                    overlay_by_id[rec.attrs["id"]] = nid
        for rec, nid in by_kind.get("button", []):
            target = ""
            for key in ("data-target", "data-bs-target", "aria-controls", "data-toggle-target", "href"):
                value = rec.attrs.get(key, "")
                if value:
                    target = value.lstrip("#")
                    if target in overlay_by_id:
                        break
            if target in overlay_by_id:
                graph.add_edge(nid, overlay_by_id[target], "click_trigger")

        # layout: DOM-adjacent siblings
        groups: dict[int, list[tuple[Tag, str]]] = {}
        containers: dict[int, Tag] = {}
        for rec in records:
            container, climbed = _sibling_anchor(rec.element)
            if container is None:
                continue
            slot = groups.setdefault(id(container), [])
            containers[id(container)] = container
            if not any(c is climbed for c, _ in slot):
                slot.append((climbed, ids[id(rec.element)]))
        for slot in groups.values():
            for (_, a), (_, b) in zip(slot, slot[1:]):
                graph.add_edge(a, b, "layout")

        # search box -> data container -> submit control
        data_nodes = [nid for _, nid in by_kind.get("business_data", [])]
        buttons = by_kind.get("button", [])
        order = {nid: i for i, nid in enumerate(ids.values())}
        for rec, sid in by_kind.get("search_box", []):
            form = owner(rec.element, ("form",))
            submit = submit_of_form.get(form) if form else None
            if submit is None:
                later = [nid for _, nid in buttons if order[nid] > order[sid]]
                submit = later[0] if later else None
            if submit is None:
                continue
            for did in data_nodes:
                graph.add_edge(sid, did, "fills")
                if not graph.has_edge(did, submit, "controls"):
                    graph.add_edge(did, submit, "controls")

        # data flow (experimental): only forms feeding a data container on the same page
        for rec, fid in by_kind.get("form", []):
            feeds = any(owner(r.element, ("form",)) == fid for r, _ in by_kind.get("search_box", []) + by_kind.get("input", []))
            if feeds:
                for did in data_nodes:
                    graph.add_edge(fid, did, "data_flow")

    for src, dst, _ in pending_nav:
        if not graph.has_edge(src, dst, "nav_to"):
            graph.add_edge(src, dst, "nav_to")
    return graph


# -- link filtering ------------------------------------------------------------

ASSET_EXTENSIONS = ("png", "jpg", "jpeg", "gif", "css", "js", "svg", "ico", "pdf")


@dataclass(frozen=True)
class LinkFilterRule:
    rule_id: str
    description: str
    predicate: Callable[[str, str], bool]  # (raw url, resolved url) -> matches
    action: str  # keep | drop

    def __post_init__(self) -> None:
        if self.action not in ("keep", "drop"):
            raise ValueError("action must be 'keep' or 'drop'")


def default_link_rules(base_url: str, max_depth: int = 2) -> list[LinkFilterRule]:
    domain = urlparse(base_url).netloc.lower()

    def off_domain(raw: str, url: str) -> bool:
        return urlparse(url).netloc.lower() != domain

    def asset(raw: str, url: str) -> bool:
        path = urlparse(url).path.lower()
        return path.rsplit(".", 1)[-1] in ASSET_EXTENSIONS if "." in path.rsplit("/", 1)[-1] else False

    def fragment_only(raw: str, url: str) -> bool:
        return raw.startswith("#") or (
            urldefrag(url)[0] == urldefrag(base_url)[0] and bool(urldefrag(url)[1])
        )

    def too_deep(raw: str, url: str) -> bool:
        return len([p for p in urlparse(url).path.split("/") if p]) > max_depth

    return [
        LinkFilterRule("same-domain", "drop links leaving the site", off_domain, "drop"),
        LinkFilterRule("asset-extension", "drop static assets", asset, "drop"),
        LinkFilterRule("fragment-only", "drop in-page anchors", fragment_only, "drop"),
        LinkFilterRule("max-depth", f"drop paths deeper than {max_depth}", too_deep, "drop"),
    ]


def filter_links(
    candidate_urls: Iterable[str],
    rules: Sequence[LinkFilterRule],
    judge=None,
    *,
    base_url: str = "",
    threshold: float = 0.5,
) -> list[str]:
    """Deduplicate and filter candidate links; first matching rule decides.

    With a ``judge`` gateway each rule-surviving url is scored and kept iff its
    score reaches ``threshold``. Judge failures fall back to the rule result.
    """
    if not rules:
        raise ValueError("at least one link rule is required")
    kept: list[str] = []
    seen: set[str] = set()
    for raw in candidate_urls:
        url = urljoin(base_url, raw) if base_url else raw
        if url in seen:
            continue
        seen.add(url)
        action = "keep"
        for rule in rules:
            if rule.predicate(raw, url):
                action = rule.action
                break
        if action == "keep":
            kept.append(url)
    if judge is None or not kept:
        return kept
    try:
        return [u for u in kept if _judge_link(judge, u) >= threshold]
    except (GatewayError, ValueError, KeyError, TypeError) as exc:
        logger.warning("link judge failed, keeping rule-based result: %s", exc)
        return kept


def _judge_link(judge, url: str) -> float:
    from ..gateway import ChatRequest
    from ..jsonutil import parse_json_object

    prompt = (
        "Rate how useful this link is for building web interaction tasks "
        "(0.0 = boilerplate or low quality, 1.0 = rich interactive content).\n"
        f"URL: {url}\n"
        'Respond with JSON only: {"score": <number>}'
    )
    data = parse_json_object(judge.complete(ChatRequest.user(prompt), "link_filter").text)
    return float(data["score"])
