"""Deterministic synthetic dataset pages with known ground truth.

Three templates: a metadata table and a list of labelled fields (metadata in
page structure) and a prose page where most metadata sits in sentences.
Every planted value is recorded so extraction rates and classifier accuracy
can be checked against the generator instead of against hand labels.
"""

from __future__ import annotations

import html as htmllib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .dom_graph import parse_html
from .node_classifier import LABEL_INDEX, write_labels
from .profile import FairProfile, SpatialExtent, TemporalInterval

TEMPLATES = ("table", "fields", "prose")
PAGE_TYPE = {"table": 2, "fields": 2, "prose": 3}

HAZARDS = ["collapse", "landslide", "debris flow", "glacier", "permafrost", "flood", "drought",
           "snow cover", "soil moisture", "land cover", "precipitation", "vegetation"]
PRODUCTS = ["inventory", "dataset", "observations", "records", "grid", "time series", "survey", "maps"]
REGIONS = ["Tibetan Plateau", "Hengduan Mountains", "Qilian Mountains", "Loess Plateau", "Yangtze River Basin",
           "Tianshan Mountains", "Sichuan Basin", "Pearl River Delta", "Mongolian Plateau", "Himalaya"]
SURNAMES = ["Zhang", "Li", "Wang", "Liu", "Chen", "Yang", "Zhao", "Huang", "Zhou", "Wu", "Smith", "Garcia",
            "Müller", "Rossi", "Tanaka", "Kim"]
GIVEN = ["Wei", "Na", "Jun", "Min", "Lei", "Fang", "Yan", "Hui", "Anna", "Paul", "Maria", "Kenji"]
INSTITUTIONS = [
    "National Earth System Science Data Center",
    "National Tibetan Plateau Data Center",
    "Institute of Mountain Hazards and Environment, Chinese Academy of Sciences",
    "Cold and Arid Regions Science Data Center",
    "Institute of Geographic Sciences and Natural Resources Research",
    "Lanzhou University",
    "Resource and Environment Science Data Center",
    "Chengdu University of Technology",
]
KEYWORDS = ["geohazard", "remote sensing", "mountain", "field survey", "climate", "hydrology", "GIS",
            "monitoring", "risk", "ecology", "terrain", "satellite"]
LICENSES = [
    ("CC BY 4.0", "CC-BY-4.0"),
    ("Creative Commons Attribution 4.0 International", "CC-BY-4.0"),
    ("CC0 1.0", "CC0-1.0"),
    ("Open Database License", "ODbL-1.0"),
    ("CC BY NC 4.0", "CC-BY-NC-4.0"),
    ("Creative Commons Attribution ShareAlike 4.0 International", "CC-BY-SA-4.0"),
]
MONTH_NAMES = ["January", "February", "March", "April", "May", "June", "July", "August", "September",
               "October", "November", "December"]
FILLER = [
    "Field teams revisited each site after the rainy season.",
    "Records were checked against high resolution imagery.",
    "Quality flags accompany every record.",
    "The archive is updated when new surveys are completed.",
    "Gaps in the record are documented in the accompanying notes.",
    "Values were harmonised to a common grid before release.",
]

# planting rates; pages lacking an identifier also lack a license so they
# exercise the ceiling behaviour of the scorer
P_NO_ID_AND_LICENSE = 0.15
P_TEMPORAL = 0.9
P_SPATIAL = 0.9
P_REFERENCES = 0.7


@dataclass
class SyntheticPage:
    source_id: str
    template: str
    html: str
    labels: dict[int, int]
    truth: dict = field(default_factory=dict)

    @property
    def page_type(self) -> int:
        return PAGE_TYPE[self.template]


def _e(text: str) -> str:
    return htmllib.escape(text, quote=True)


def _name(rng: random.Random) -> str:
    return f"{rng.choice(SURNAMES)} {rng.choice(GIVEN)}"


def _issued(rng: random.Random) -> tuple[str, str]:
    y, m, d = rng.randint(2012, 2023), rng.randint(1, 12), rng.randint(1, 28)
    style = rng.randrange(3)
    iso = f"{y:04d}-{m:02d}-{d:02d}"
    if style == 0:
        return iso, iso
    if style == 1:
        return f"{d} {MONTH_NAMES[m - 1]} {y}", iso
    return f"{MONTH_NAMES[m - 1]} {d}, {y}", iso


def _temporal(rng: random.Random) -> tuple[str, str, str]:
    """Surface form plus extractor-normalised start and end."""
    y0 = rng.randint(1990, 2015)
    y1 = y0 + rng.randint(1, 8)
    style = rng.randrange(4)
    if style == 0:
        return f"{y0}–{y1}", str(y0), str(y1)
    if style == 1:
        return f"{y0} to {y1}", str(y0), str(y1)
    if style == 2:
        return f"between {y0} and {y1}", str(y0), str(y1)
    m0, m1 = rng.randint(1, 12), rng.randint(1, 12)
    return (f"{MONTH_NAMES[m0 - 1]} {y0} to {MONTH_NAMES[m1 - 1]} {y1}",
            f"{y0:04d}-{m0:02d}", f"{y1:04d}-{m1:02d}")


def _spatial(rng: random.Random) -> tuple[str, str, str]:
    """Surface form, extractor field (bbox or point) and its normalised value."""
    if rng.random() < 0.7:
        s = rng.randint(20, 40)
        n = s + rng.randint(1, 6)
        w = rng.randint(75, 110)
        e = w + rng.randint(1, 12)
        if rng.random() < 0.5:
            return f"{s}°N–{n}°N, {w}°E–{e}°E", "bbox", f"{w},{s},{e},{n}"
        return f"{w}°E to {e}°E and {s}°N to {n}°N", "bbox", f"{w},{s},{e},{n}"
    lat_d, lat_m = rng.randint(20, 45), rng.choice([0, 15, 30, 45])
    lon_d, lon_m = rng.randint(75, 120), rng.choice([0, 15, 30, 45])
    lat, lon = lat_d + lat_m / 60, lon_d + lon_m / 60
    return (f"{lat_d}°{lat_m:02d}'00\"N, {lon_d}°{lon_m:02d}'00\"E", "point",
            f"{_num(lon)},{_num(lat)}")


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(round(x, 6))


def _doi(rng: random.Random, index: int) -> str:
    return f"10.{rng.randint(1000, 99999)}/ds.{2000 + index}.{rng.randint(100, 999)}"


def _abstract(rng: random.Random, hazard: str, region: str) -> str:
    lead = (f"This collection documents {hazard} events and related surface conditions "
            f"across the {region}, compiled from field campaigns, archival reports and satellite imagery.")
    return " ".join([lead, *rng.sample(FILLER, 3)])


def _draw(rng: random.Random, index: int, template: str) -> dict:
    hazard = rng.choice(HAZARDS)
    region = rng.choice(REGIONS)
    product = rng.choice(PRODUCTS)
    truth: dict = {
        "title": f"{hazard.capitalize()} {product} of the {region}",
        "creator": "; ".join(_name(rng) for _ in range(rng.randint(1, 3))),
        "publisher": rng.choice(INSTITUTIONS),
        "keywords": [hazard, *rng.sample(KEYWORDS, rng.randint(2, 4))],
        "access_url": f"https://data.example.org/download/ds-{index:04d}",
    }
    truth["abstract"] = _abstract(rng, hazard, region)
    truth["issued_text"], truth["issued"] = _issued(rng)
    if rng.random() >= P_NO_ID_AND_LICENSE:
        truth["identifier"] = _doi(rng, index)
        truth["license_text"], truth["license"] = rng.choice(LICENSES)
    if rng.random() < P_TEMPORAL:
        truth["temporal_text"], truth["temporal_start"], truth["temporal_end"] = _temporal(rng)
    if rng.random() < P_SPATIAL:
        truth["spatial_text"], truth["spatial_kind"], truth["spatial_value"] = _spatial(rng)
    if rng.random() < P_REFERENCES:
        truth["references"] = [f"https://www.example.org/publications/{rng.randint(1000, 9999)}"
                               for _ in range(rng.randint(1, 2))]
    return truth


# ---------------------------------------------------------------------------
# templates; gt="..." marks the node carrying a class label and is stripped
# before the page is written

def _head(truth: dict) -> str:
    return (f"<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\">"
            f"<title>{_e(truth['title'])} | Data Portal</title>"
            f"<link rel=\"stylesheet\" href=\"/static/site.css\"></head>\n")


def _nav() -> str:
    return ('<div class="navbar"><ul class="menu"><li><a href="/">Home</a></li>'
            '<li><a href="/search">Search</a></li><li><a href="/help">Help</a></li></ul></div>\n')


def _footer() -> str:
    return '<div class="footer"><p>Contact the portal team for questions.</p></div>\n</body></html>\n'


def _refs_html(truth: dict, cls: str) -> str:
    if "references" not in truth:
        return ""
    items = "".join(f'<li><a href="{_e(u)}">{_e(u)}</a></li>' for u in truth["references"])
    return f'<div class="{cls}"><h3>Related publications</h3><ul>{items}</ul></div>\n'


def _table_page(truth: dict, rng: random.Random) -> str:
    rows = [
        ("Creator", "creator", f'<td gt="creator" class="meta-creator">{_e(truth["creator"])}</td>'),
        ("Publisher", "publisher", f'<td gt="publisher" class="meta-publisher">{_e(truth["publisher"])}</td>'),
        ("Release date", "date", f'<td gt="release_date" class="meta-date">{_e(truth["issued_text"])}</td>'),
        ("Keywords", "keyword", f'<td gt="keywords" class="meta-keyword">{_e(", ".join(truth["keywords"]))}</td>'),
    ]
    if "identifier" in truth:
        rows.append(("DOI", "doi", f'<td gt="identifier" class="meta-doi">{_e(truth["identifier"])}</td>'))
        rows.append(("License", "license", f'<td gt="license" class="meta-license">{_e(truth["license_text"])}</td>'))
    if "temporal_text" in truth:
        rows.append(("Temporal coverage", "temporal",
                     f'<td gt="temporal_text" class="meta-temporal">{_e(truth["temporal_text"])}</td>'))
    if "spatial_text" in truth:
        rows.append(("Spatial coverage", "spatial",
                     f'<td gt="spatial_text" class="meta-spatial">{_e(truth["spatial_text"])}</td>'))
    rng.shuffle(rows)
    body = "".join(f'<tr><th class="label">{label}</th>{cell}</tr>\n' for label, _, cell in rows)
    return (
        _head(truth) + "<body>\n" + _nav()
        + f'<div class="container"><h1 gt="title" class="dataset-title">{_e(truth["title"])}</h1>\n'
        + f'<div class="dataset-abstract"><h2>Abstract</h2><p gt="abstract">{_e(truth["abstract"])}</p></div>\n'
        + f'<table class="metadata">\n{body}</table>\n'
        + f'<p class="download"><a gt="access_link" class="access-button" href="{_e(truth["access_url"])}">'
        + "Download data</a></p>\n"
        + _refs_html(truth, "references") + "</div>\n" + _footer()
    )


def _fields_page(truth: dict, rng: random.Random) -> str:
    def item(label: str, cue: str, cls: str, value: str) -> str:
        return (f'<div class="field field-{cue}"><span class="field-label">{label}:</span> '
                f'<span gt="{cls}" class="field-value">{_e(value)}</span></div>\n')

    items = [
        item("Author(s)", "creator", "creator", truth["creator"]),
        item("Publisher", "publisher", "publisher", truth["publisher"]),
        item("Published", "date", "release_date", truth["issued_text"]),
        item("Keywords", "keyword", "keywords", "; ".join(truth["keywords"])),
    ]
    if "identifier" in truth:
        items.append(item("Identifier", "doi", "identifier", f"https://doi.org/{truth['identifier']}"))
        items.append(item("Licence", "license", "license", truth["license_text"]))
    if "temporal_text" in truth:
        items.append(item("Time period", "temporal", "temporal_text", truth["temporal_text"]))
    if "spatial_text" in truth:
        items.append(item("Coverage", "spatial", "spatial_text", truth["spatial_text"]))
    rng.shuffle(items)
    return (
        _head(truth) + "<body>\n" + _nav()
        + f'<div id="content"><div class="record-header"><h2 gt="title" class="record-title">{_e(truth["title"])}</h2></div>\n'
        + f'<div class="record-fields">\n{"".join(items)}</div>\n'
        + f'<div class="record-abstract"><h3>Description</h3><div gt="abstract" class="text">{_e(truth["abstract"])}</div></div>\n'
        + f'<div class="record-access"><a gt="access_link" class="btn access" href="{_e(truth["access_url"])}">'
        + "Access the data</a></div>\n"
        + _refs_html(truth, "record-links") + "</div>\n" + _footer()
    )


def _prose_page(truth: dict, rng: random.Random) -> str:
    paragraphs = [f'<p gt="abstract" class="lead">{_e(truth["abstract"])}</p>']
    if "spatial_text" in truth:
        paragraphs.append(f'<p gt="spatial_text" class="spatial-note">The study area extends over '
                          f'{_e(truth["spatial_text"])}, covering the main valleys of the region.</p>')
    if "temporal_text" in truth:
        paragraphs.append(f'<p gt="temporal_text" class="temporal-note">Observations were collected '
                          f'{_e(truth["temporal_text"])} at irregular intervals.</p>')
    provenance = (f'The data were compiled by {_e(truth["creator"])} and are provided by the '
                  f'{_e(truth["publisher"])}. They were made public on {_e(truth["issued_text"])}.')
    paragraphs.append(f"<p>{provenance}</p>")
    if "identifier" in truth:
        paragraphs.append(f'<p>When using these data please cite doi:{_e(truth["identifier"])}. '
                          f'They are released under the {_e(truth["license_text"])} license.</p>')
    paragraphs.append(f'<p gt="keywords" class="keyword-line">{_e(", ".join(truth["keywords"]))}</p>')
    head, tail = paragraphs[:1], paragraphs[1:]
    rng.shuffle(tail)
    return (
        _head(truth) + "<body>\n" + _nav()
        + f'<div class="article"><h1 gt="title">{_e(truth["title"])}</h1>\n'
        + "\n".join(head + tail) + "\n"
        + f'<p>The files can be obtained from <a gt="access_link" href="{_e(truth["access_url"])}">'
        + "the download page</a>.</p>\n"
        + _refs_html(truth, "see-also") + "</div>\n" + _footer()
    )


_RENDER = {"table": _table_page, "fields": _fields_page, "prose": _prose_page}
_GT_ATTR = re.compile(r' gt="([a-z_]+)"')


def _labelled(marked: str) -> tuple[str, dict[int, int]]:
    nodes = parse_html(marked)
    labels = {}
    for node in nodes:
        cls = node.attributes.get("gt")
        if node.is_text and node.parent is not None:
            # the text node holds the value itself, so it shares its element's class
            cls = nodes[node.parent].attributes.get("gt")
        labels[node.node_id] = LABEL_INDEX[cls] if cls else LABEL_INDEX["none"]
    clean = _GT_ATTR.sub("", marked)
    if len(parse_html(clean)) != len(labels):
        raise AssertionError("stripping label markers changed the tree")
    return clean, labels


def generate_corpus(n: int = 200, seed: int = 42) -> list[SyntheticPage]:
    """``n`` pages cycling through the three templates, fully labelled."""
    rng = random.Random(seed)
    pages = []
    for i in range(n):
        template = TEMPLATES[i % len(TEMPLATES)]
        truth = _draw(rng, i, template)
        html, labels = _labelled(_RENDER[template](truth, rng))
        pages.append(SyntheticPage(f"page-{i:04d}", template, html, labels, truth))
    return pages


def split(pages: list[SyntheticPage], seed: int = 42, train_fraction: float = 0.8):
    order = list(range(len(pages)))
    random.Random(seed).shuffle(order)
    cut = round(len(pages) * train_fraction)
    train = [pages[i] for i in sorted(order[:cut])]
    test = [pages[i] for i in sorted(order[cut:])]
    return train, test


def write_corpus(pages: list[SyntheticPage], out_dir: str | Path) -> Path:
    """Write ``pages/*.html``, ``labels.tsv`` and ``truth.jsonl`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    for p in pages:
        (out / "pages" / f"{p.source_id}.html").write_text(p.html, encoding="utf-8")
    write_labels(out / "labels.tsv", {p.source_id: p.labels for p in pages})
    with open(out / "truth.jsonl", "w", encoding="utf-8") as fh:
        for p in pages:
            record = {"source_id": p.source_id, "template": p.template, **p.truth}
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    return out


def read_truth(path: str | Path) -> dict[str, dict]:
    with open(path, encoding="utf-8") as fh:
        return {r["source_id"]: r for r in map(json.loads, filter(str.strip, fh))}


def plant_rates(truths: list[dict]) -> dict[str, float]:
    """Share of pages carrying each extractable field."""
    n = len(truths)
    keys = {"identifier": "identifier", "license": "license", "temporal": "temporal_start",
            "spatial": "spatial_value"}
    return {field: sum(key in t for t in truths) / n for field, key in keys.items()}


# ---------------------------------------------------------------------------
# search corpus

def search_corpus(n: int = 100, planted: int = 58, term: str = "collapse", seed: int = 42) -> list[FairProfile]:
    """Profiles of which exactly ``planted`` mention ``term`` as a token."""
    if not 0 <= planted <= n:
        raise ValueError("planted must be between 0 and n")
    rng = random.Random(seed)
    others = [h for h in HAZARDS if term not in h.split()]
    hits = set(rng.sample(range(n), planted))
    profiles = []
    for i in range(n):
        region = rng.choice(REGIONS)
        hazard = rng.choice(others)
        title = f"{hazard.capitalize()} {rng.choice(PRODUCTS)} of the {region}"
        keywords = [hazard, *rng.sample(KEYWORDS, 2)]
        description = f"Observations of {hazard} across the {region}."
        if i in hits:
            where = rng.randrange(3)
            if where == 0:
                title = f"{term.capitalize()} {rng.choice(PRODUCTS)} of the {region}"
            elif where == 1:
                keywords.append(term)
            else:
                description += f" Includes {term} sites."
        y0 = rng.randint(1995, 2015)
        s, w = rng.randint(20, 40), rng.randint(75, 110)
        profiles.append(FairProfile(
            source_id=f"rec-{i:03d}",
            title=title,
            description=description,
            keywords=keywords,
            publisher=rng.choice(INSTITUTIONS),
            issued=f"{y0 + 5}-01-01",
            spatial=SpatialExtent((w, s, w + 4, s + 3)),
            temporal=TemporalInterval(f"{y0}-01-01", f"{y0 + 3}-12-31"),
        ))
    return profiles
