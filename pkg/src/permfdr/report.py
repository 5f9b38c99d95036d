"""Join published RFT-FWE cluster tables with FDR rescoring and emit artifacts.

The join key is (contrast_id, extent): published cluster tables rarely
carry coordinates reliably, so extents are the only robust handle.
Duplicate extents within a contrast are paired in deterministic order;
rows that find no partner are reported, never dropped silently.

All emitted artifacts (CSV, SVG) are deterministic byte-for-byte for a
fixed input: probabilities are written at 17 significant digits, SVG
coordinates at 6 decimals, and row order is pinned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .clustering import Cluster
from .errors import (
    DuplicateAmbiguityError,
    InvalidPValueError,
    MissingPValueError,
)

COMPARISON_HEADER = [
    "contrast_id",
    "cluster_id",
    "extent",
    "p_rft_fwe",
    "p_uncorrected",
    "q_value",
    "significant_rft",
    "significant_fdr",
]

ANALYZED_HEADER = [
    "contrast_id",
    "cluster_id",
    "extent",
    "peak_t",
    "peak_x",
    "peak_y",
    "peak_z",
    "p_uncorrected",
    "q_value",
    "significant_fdr",
]

PUBLISHED_HEADER = ["contrast_id", "extent", "p_rft_fwe"]


@dataclass(frozen=True)
class PublishedCluster:
    """One row of a published cluster table."""

    contrast_id: str
    extent: int
    p_rft_fwe: float

    def __post_init__(self):
        if self.extent < 1:
            raise ValueError(f"published extent must be >= 1, got {self.extent}")
        if not 0.0 < self.p_rft_fwe <= 1.0:
            raise InvalidPValueError(
                f"p_rft_fwe must be in (0, 1], got {self.p_rft_fwe}"
            )


@dataclass(frozen=True)
class ComparisonRow:
    contrast_id: str
    cluster_id: int
    extent: int
    p_rft_fwe: float
    p_uncorrected: float
    q_value: float
    significant_rft: bool
    significant_fdr: bool


@dataclass(frozen=True)
class UnmatchedEntry:
    """A table row that found no partner; side is 'published' or 'analyzed'."""

    side: str
    contrast_id: str
    extent: int


@dataclass(frozen=True)
class ComparisonSummary:
    """Quadrant counts and the two boundary statistics of a comparison.

    Boundary statistics are None when their defining sets are empty:
    min_p_rft_fdr_fail is the smallest published p among clusters that
    failed FDR, max_p_rft_fdr_pass the largest among clusters that passed.
    """

    n_rows: int
    n_rft_and_fdr: int
    n_rft_only: int
    n_fdr_only: int
    n_neither: int
    min_p_rft_fdr_fail: float | None
    max_p_rft_fdr_pass: float | None
    alpha_rft: float
    alpha_fdr: float


def join_tables(published, analyzed_by_contrast, alpha_rft=0.05):
    """Pair published rows with analyzed clusters on (contrast_id, extent).

    Parameters
    ----------
    published : list of PublishedCluster
    analyzed_by_contrast : dict contrast_id -> list of Cluster
        Clusters must carry p_uncorrected, q_value and significant_fdr.

    Returns
    -------
    (rows, unmatched)
        Joined ComparisonRow list plus UnmatchedEntry report covering
        every row of either side that found no partner.

    Within one (contrast, extent) key both sides are paired in
    deterministic order (published: input order; analyzed: extent
    descending then cluster id). Nonzero counts that differ raise
    DuplicateAmbiguityError; a zero count on one side yields unmatched
    entries instead.
    """
    rows = []
    unmatched = []
    contrast_ids = list(dict.fromkeys([p.contrast_id for p in published]))
    for cid in analyzed_by_contrast:
        if cid not in contrast_ids:
            contrast_ids.append(cid)

    for cid in contrast_ids:
        pub = [p for p in published if p.contrast_id == cid]
        ana = sorted(
            analyzed_by_contrast.get(cid, []), key=lambda c: (-c.extent, c.id)
        )
        for c in ana:
            if c.p_uncorrected is None:
                raise MissingPValueError(
                    f"analyzed cluster {c.id} in contrast {cid!r} has no p-value"
                )
            if c.q_value is None or c.significant_fdr is None:
                raise MissingPValueError(
                    f"analyzed cluster {c.id} in contrast {cid!r} has no q-value"
                )
        pub_by_extent = {}
        for p in pub:
            pub_by_extent.setdefault(p.extent, []).append(p)
        ana_by_extent = {}
        for c in ana:
            ana_by_extent.setdefault(c.extent, []).append(c)

        extents = sorted(set(pub_by_extent) | set(ana_by_extent), reverse=True)
        for extent in extents:
            ps = pub_by_extent.get(extent, [])
            cs = ana_by_extent.get(extent, [])
            if ps and cs:
                if len(ps) != len(cs):
                    raise DuplicateAmbiguityError(
                        f"contrast {cid!r}, extent {extent}: "
                        f"{len(ps)} published rows vs {len(cs)} analyzed clusters"
                    )
                for p, c in zip(ps, cs):
                    rows.append(
                        ComparisonRow(
                            contrast_id=cid,
                            cluster_id=c.id,
                            extent=extent,
                            p_rft_fwe=p.p_rft_fwe,
                            p_uncorrected=c.p_uncorrected,
                            q_value=c.q_value,
                            significant_rft=p.p_rft_fwe <= alpha_rft,
                            significant_fdr=bool(c.significant_fdr),
                        )
                    )
            elif ps:
                unmatched.extend(
                    UnmatchedEntry("published", cid, extent) for _ in ps
                )
            else:
                unmatched.extend(
                    UnmatchedEntry("analyzed", cid, extent) for _ in cs
                )
    return rows, unmatched


def summarize(rows, alpha_rft=0.05, alpha_fdr=0.05):
    """Quadrant counts over (RFT significance, FDR significance)."""
    n_both = n_rft = n_fdr = n_neither = 0
    fail_ps = []
    pass_ps = []
    for r in rows:
        rft = r.p_rft_fwe <= alpha_rft
        fdr = r.significant_fdr
        if rft and fdr:
            n_both += 1
        elif rft:
            n_rft += 1
        elif fdr:
            n_fdr += 1
        else:
            n_neither += 1
        (pass_ps if fdr else fail_ps).append(r.p_rft_fwe)
    return ComparisonSummary(
        n_rows=len(rows),
        n_rft_and_fdr=n_both,
        n_rft_only=n_rft,
        n_fdr_only=n_fdr,
        n_neither=n_neither,
        min_p_rft_fdr_fail=min(fail_ps) if fail_ps else None,
        max_p_rft_fdr_pass=max(pass_ps) if pass_ps else None,
        alpha_rft=float(alpha_rft),
        alpha_fdr=float(alpha_fdr),
    )


def _fmt_bool(b):
    return "true" if b else "false"


def _parse_bool(text, path, line_num):
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"{path}, line {line_num}: boolean must be true/false, got {text!r}")


def _parse_int(text, name, path, line_num, minimum=None):
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"{path}, line {line_num}: {name} must be an integer, got {text!r}")
    if minimum is not None and value < minimum:
        raise ValueError(f"{path}, line {line_num}: {name} must be >= {minimum}, got {value}")
    return value


def _parse_prob(text, name, path, line_num, zero_ok=False):
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{path}, line {line_num}: {name} must be a number, got {text!r}")
    lo_ok = value >= 0.0 if zero_ok else value > 0.0
    if not (math.isfinite(value) and lo_ok and value <= 1.0):
        raise InvalidPValueError(f"{path}, line {line_num}: {name} out of range: {text!r}")
    return value


def _check_header(got, want, path):
    if got != want:
        missing = [c for c in want if c not in (got or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)} in header")
        raise ValueError(f"{path}: header must be {','.join(want)}, got {','.join(got)}")


def emit_comparison_csv(rows, path):
    """Write comparison rows sorted by (contrast_id, cluster_id)."""
    ordered = sorted(rows, key=lambda r: (r.contrast_id, r.cluster_id))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        for r in ordered:
            w.writerow(
                [
                    r.contrast_id,
                    r.cluster_id,
                    r.extent,
                    f"{r.p_rft_fwe:.17g}",
                    f"{r.p_uncorrected:.17g}",
                    f"{r.q_value:.17g}",
                    _fmt_bool(r.significant_rft),
                    _fmt_bool(r.significant_fdr),
                ]
            )


def read_comparison_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(header, COMPARISON_HEADER, path)
        for rec in reader:
            n = reader.line_num
            if len(rec) != len(COMPARISON_HEADER):
                raise ValueError(f"{path}, line {n}: expected {len(COMPARISON_HEADER)} fields")
            rows.append(
                ComparisonRow(
                    contrast_id=rec[0],
                    cluster_id=_parse_int(rec[1], "cluster_id", path, n, minimum=1),
                    extent=_parse_int(rec[2], "extent", path, n, minimum=1),
                    p_rft_fwe=_parse_prob(rec[3], "p_rft_fwe", path, n),
                    p_uncorrected=_parse_prob(rec[4], "p_uncorrected", path, n),
                    q_value=_parse_prob(rec[5], "q_value", path, n),
                    significant_rft=_parse_bool(rec[6], path, n),
                    significant_fdr=_parse_bool(rec[7], path, n),
                )
            )
    return rows


def read_published_csv(path):
    """Published table: header `contrast_id,extent,p_rft_fwe` required."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(header, PUBLISHED_HEADER, path)
        for rec in reader:
            n = reader.line_num
            if len(rec) != 3:
                raise ValueError(f"{path}, line {n}: expected 3 fields")
            rows.append(
                PublishedCluster(
                    contrast_id=rec[0],
                    extent=_parse_int(rec[1], "extent", path, n, minimum=1),
                    p_rft_fwe=_parse_prob(rec[2], "p_rft_fwe", path, n),
                )
            )
    return rows


def emit_analyzed_csv(clusters_by_contrast, path):
    """Write scored clusters, one row per cluster, in pinned cluster order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANALYZED_HEADER)
        for cid in clusters_by_contrast:
            for c in clusters_by_contrast[cid]:
                if c.p_uncorrected is None or c.q_value is None:
                    raise MissingPValueError(
                        f"cluster {c.id} in contrast {cid!r} is not fully scored"
                    )
                w.writerow(
                    [
                        cid,
                        c.id,
                        c.extent,
                        f"{c.peak_t:.17g}",
                        c.peak_xyz[0],
                        c.peak_xyz[1],
                        c.peak_xyz[2],
                        f"{c.p_uncorrected:.17g}",
                        f"{c.q_value:.17g}",
                        _fmt_bool(c.significant_fdr),
                    ]
                )


def read_analyzed_csv(path):
    """Read scored clusters back as {contrast_id: [Cluster, ...]}.

    peak_linear_index is None on loaded clusters: the CSV does not carry
    grid dims, so the flat index cannot be reconstructed.
    """
    by_contrast = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(header, ANALYZED_HEADER, path)
        for rec in reader:
            n = reader.line_num
            if len(rec) != len(ANALYZED_HEADER):
                raise ValueError(f"{path}, line {n}: expected {len(ANALYZED_HEADER)} fields")
            try:
                peak_t = float(rec[3])
            except ValueError:
                raise ValueError(f"{path}, line {n}: peak_t must be a number, got {rec[3]!r}")
            cluster = Cluster(
                id=_parse_int(rec[1], "cluster_id", path, n, minimum=1),
                extent=_parse_int(rec[2], "extent", path, n, minimum=1),
                peak_t=peak_t,
                peak_xyz=(
                    _parse_int(rec[4], "peak_x", path, n, minimum=0),
                    _parse_int(rec[5], "peak_y", path, n, minimum=0),
                    _parse_int(rec[6], "peak_z", path, n, minimum=0),
                ),
                peak_linear_index=None,
                p_uncorrected=_parse_prob(rec[7], "p_uncorrected", path, n),
                q_value=_parse_prob(rec[8], "q_value", path, n),
                significant_fdr=_parse_bool(rec[9], path, n),
            )
            by_contrast.setdefault(rec[0], []).append(cluster)
    return by_contrast


# SVG scatter. x = -log10(p_rft_fwe), y = -log10(p_uncorrected); filled
# markers pass FDR, open markers fail; dashed verticals mark the .05 and
# .00001 boundaries.

SVG_WIDTH = 640
SVG_HEIGHT = 480
REF_P_LINES = (0.05, 0.00001)


@dataclass(frozen=True)
class ScatterGeometry:
    """Affine data-to-pixel mapping of the scatter plot."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    px_left: float = 70.0
    px_right: float = 610.0
    px_top: float = 30.0
    px_bottom: float = 430.0

    def x_px(self, x):
        f = (x - self.xmin) / (self.xmax - self.xmin)
        return self.px_left + f * (self.px_right - self.px_left)

    def y_px(self, y):
        f = (y - self.ymin) / (self.ymax - self.ymin)
        return self.px_bottom - f * (self.px_bottom - self.px_top)

    def x_data(self, px):
        f = (px - self.px_left) / (self.px_right - self.px_left)
        return self.xmin + f * (self.xmax - self.xmin)

    def y_data(self, px):
        f = (self.px_bottom - px) / (self.px_bottom - self.px_top)
        return self.ymin + f * (self.ymax - self.ymin)


def scatter_points(rows):
    """Data-space coordinates, sorted by (contrast_id, cluster_id).

    Returns [(x, y, filled)] with x = -log10(p_rft_fwe),
    y = -log10(p_uncorrected), filled = significant_fdr.
    """
    ordered = sorted(rows, key=lambda r: (r.contrast_id, r.cluster_id))
    return [
        (-math.log10(r.p_rft_fwe), -math.log10(r.p_uncorrected), r.significant_fdr)
        for r in ordered
    ]


def scatter_geometry(points):
    xhi = max([p[0] for p in points] + [-math.log10(min(REF_P_LINES))])
    yhi = max([p[1] for p in points] + [1.5])
    return ScatterGeometry(xmin=0.0, xmax=1.08 * xhi, ymin=0.0, ymax=1.08 * yhi)


def _svg_open(parts, title):
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">'
    )
    parts.append(f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="#ffffff"/>')
    parts.append(
        f'<text x="{SVG_WIDTH / 2:.6f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>'
    )


def emit_scatter_svg(rows, path, cdt_label=""):
    """Write the comparison scatter; byte-deterministic for fixed input."""
    title = "Published RFT-FWE p vs permutation FDR"
    if cdt_label:
        title += f" (CDT {cdt_label})"
    parts = []
    _svg_open(parts, title)
    points = scatter_points(rows)
    if not points:
        parts.append(
            f'<text x="{SVG_WIDTH / 2:.6f}" y="{SVG_HEIGHT / 2:.6f}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="16">no data</text>'
        )
        parts.append("</svg>")
        Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
        return

    geo = scatter_geometry(points)
    # Axes.
    parts.append(
        f'<line x1="{geo.px_left:.6f}" y1="{geo.px_bottom:.6f}" '
        f'x2="{geo.px_right:.6f}" y2="{geo.px_bottom:.6f}" stroke="#000000"/>'
    )
    parts.append(
        f'<line x1="{geo.px_left:.6f}" y1="{geo.px_bottom:.6f}" '
        f'x2="{geo.px_left:.6f}" y2="{geo.px_top:.6f}" stroke="#000000"/>'
    )
    for tick in range(0, int(math.floor(geo.xmax)) + 1):
        px = geo.x_px(tick)
        parts.append(
            f'<line x1="{px:.6f}" y1="{geo.px_bottom:.6f}" '
            f'x2="{px:.6f}" y2="{geo.px_bottom + 5:.6f}" stroke="#000000"/>'
        )
        parts.append(
            f'<text x="{px:.6f}" y="{geo.px_bottom + 18:.6f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{tick}</text>'
        )
    for tick in range(0, int(math.floor(geo.ymax)) + 1):
        py = geo.y_px(tick)
        parts.append(
            f'<line x1="{geo.px_left - 5:.6f}" y1="{py:.6f}" '
            f'x2="{geo.px_left:.6f}" y2="{py:.6f}" stroke="#000000"/>'
        )
        parts.append(
            f'<text x="{geo.px_left - 9:.6f}" y="{py + 4:.6f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{tick}</text>'
        )
    parts.append(
        f'<text x="{(geo.px_left + geo.px_right) / 2:.6f}" y="{geo.px_bottom + 38:.6f}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        "-log10(published RFT-FWE p)</text>"
    )
    parts.append(
        f'<text x="16" y="{(geo.px_top + geo.px_bottom) / 2:.6f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(geo.px_top + geo.px_bottom) / 2:.6f})">'
        "-log10(permutation p)</text>"
    )
    # Reference boundaries.
    for ref_p in REF_P_LINES:
        x = -math.log10(ref_p)
        px = geo.x_px(x)
        parts.append(
            f'<line x1="{px:.6f}" y1="{geo.px_top:.6f}" '
            f'x2="{px:.6f}" y2="{geo.px_bottom:.6f}" '
            f'stroke="#888888" stroke-dasharray="4,3"/>'
        )
        parts.append(
            f'<text x="{px + 4:.6f}" y="{geo.px_top + 12:.6f}" '
            f'font-family="sans-serif" font-size="10" fill="#555555">p={ref_p:g}</text>'
        )
    for x, y, filled in points:
        px, py = geo.x_px(x), geo.y_px(y)
        if filled:
            parts.append(f'<circle cx="{px:.6f}" cy="{py:.6f}" r="4" fill="#000000"/>')
        else:
            parts.append(
                f'<circle cx="{px:.6f}" cy="{py:.6f}" r="4" '
                f'fill="none" stroke="#000000"/>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
