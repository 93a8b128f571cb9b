"""Legacy ASCII VTK reader/writer for labeled tetrahedral meshes.

Layout written by :func:`write_mesh`::

    # vtk DataFile Version 3.0
    <title / provenance>
    ASCII
    DATASET UNSTRUCTURED_GRID
    FIELD FieldData 1
    surface_labels 4 <k> int        # facet triplet + integer label per line
    POINTS <n> double
    CELLS <m> <5m>
    CELL_TYPES <m>
    CELL_DATA <m>
    FIELD FieldData <c>             # 'region' plus user cell arrays
    POINT_DATA <n>
    FIELD FieldData <p>             # user point arrays

Floats are printed with 17 significant digits so a write/read cycle is exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ParseError, ValidationError
from .geometry import KNOWN_FACET_LABELS, KNOWN_REGION_LABELS, TetMesh, orient_tets

VTK_TETRA = 10
DEFAULT_TITLE = "fiberkit mesh"


@dataclass
class VTKData:
    mesh: TetMesh
    point_data: dict = field(default_factory=dict)
    cell_data: dict = field(default_factory=dict)
    title: str = DEFAULT_TITLE


def _fmt_rows(arr):
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr[:, None]
    if np.issubdtype(arr.dtype, np.integer):
        return "\n".join(" ".join(str(int(v)) for v in row) for row in arr)
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in arr)


def _field_block(arrays, count):
    out = [f"FIELD FieldData {len(arrays)}"]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if len(arr) != count:
            raise ValidationError(f"array {name!r} has {len(arr)} tuples, expected {count}")
        if not name or any(c.isspace() for c in name):
            raise ValidationError(f"invalid array name {name!r}")
        ncomp = 1 if arr.ndim == 1 else int(np.prod(arr.shape[1:]))
        kind = "int" if np.issubdtype(arr.dtype, np.integer) else "double"
        out.append(f"{name} {ncomp} {count} {kind}")
        if count:
            out.append(_fmt_rows(arr.reshape(count, ncomp) if ncomp > 1 else arr))
    return out


def format_vtk(mesh, point_data=None, cell_data=None, title=DEFAULT_TITLE):
    """Serialize to the legacy VTK text (returned as a string)."""
    title = " ".join(str(title).split())[:255] or DEFAULT_TITLE
    n, m = mesh.n_nodes, mesh.n_tets
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append("FIELD FieldData 1")
    lines.append(f"surface_labels 4 {len(mesh.facets)} int")
    if len(mesh.facets):
        lines.append(_fmt_rows(np.column_stack([mesh.facets, mesh.facet_labels])))
    lines.append(f"POINTS {n} double")
    lines.append(_fmt_rows(mesh.nodes))
    lines.append(f"CELLS {m} {5 * m}")
    lines.append(_fmt_rows(np.column_stack([np.full(m, 4), mesh.tets])))
    lines.append(f"CELL_TYPES {m}")
    lines.append("\n".join([str(VTK_TETRA)] * m))
    cells = {"region": mesh.cell_regions}
    cells.update(cell_data or {})
    lines.append(f"CELL_DATA {m}")
    lines.extend(_field_block(cells, m))
    if point_data:
        lines.append(f"POINT_DATA {n}")
        lines.extend(_field_block(point_data, n))
    return "\n".join(lines) + "\n"


def write_mesh(mesh, path, point_data=None, cell_data=None, title=DEFAULT_TITLE):
    Path(path).write_text(format_vtk(mesh, point_data, cell_data, title))


class _Lines:
    def __init__(self, text, path):
        self.lines = text.splitlines()
        self.i = 0
        self.path = path

    def error(self, msg, line=None):
        return ParseError(msg, line=self.i if line is None else line, path=self.path)

    def next(self):
        while self.i < len(self.lines):
            raw = self.lines[self.i]
            self.i += 1
            if raw.strip():
                return raw.strip()
        return None

    def expect(self, keyword):
        line = self.next()
        if line is None or line.split()[0].upper() != keyword:
            raise self.error(f"expected {keyword}, found {line!r}")
        return line.split()

    def int_arg(self, toks, k):
        try:
            return int(toks[k])
        except (IndexError, ValueError):
            raise self.error(f"malformed header {' '.join(toks)!r}") from None

    def table(self, rows, ncomp, dtype):
        out = np.empty((rows, ncomp), dtype=dtype)
        conv = int if dtype is np.int64 else float
        buf = []
        start = self.i + 1
        r = 0
        while r < rows:
            line = self.next()
            if line is None:
                raise self.error(f"unexpected end of file, {rows - r} rows missing")
            try:
                buf.extend(conv(t) for t in line.split())
            except ValueError:
                raise self.error(f"cannot parse numbers in {line!r}") from None
            while len(buf) >= ncomp and r < rows:
                out[r] = buf[:ncomp]
                buf = buf[ncomp:]
                r += 1
        if buf:
            raise self.error("trailing values in table")
        return out, start


def _read_field(lines, count):
    toks = lines.expect("FIELD")
    narr = lines.int_arg(toks, 2)
    arrays = {}
    for _ in range(narr):
        head = lines.next()
        if head is None:
            raise lines.error("unexpected end of file in FIELD block")
        parts = head.split()
        if len(parts) != 4:
            raise lines.error(f"malformed array header {head!r}")
        name, ncomp, ntup, kind = parts[0], lines.int_arg(parts, 1), lines.int_arg(parts, 2), parts[3]
        if count is not None and ntup != count:
            raise lines.error(f"array {name!r} has {ntup} tuples, expected {count}")
        dtype = np.int64 if kind.lower() in ("int", "long", "vtkidtype") else float
        data, _ = lines.table(ntup, ncomp, dtype)
        arrays[name] = data[:, 0] if ncomp == 1 else data
    return arrays


def parse_vtk(text, path=None):
    """Parse text produced by :func:`format_vtk` (or compatible)."""
    lines = _Lines(text, path)
    head = lines.next()
    if head is None or not head.startswith("# vtk DataFile"):
        raise lines.error("missing '# vtk DataFile' header")
    title = lines.lines[lines.i] if lines.i < len(lines.lines) else ""
    lines.i += 1
    if (lines.next() or "").upper() != "ASCII":
        raise lines.error("only ASCII legacy files are supported")
    toks = lines.expect("DATASET")
    if len(toks) < 2 or toks[1].upper() != "UNSTRUCTURED_GRID":
        raise lines.error("dataset must be UNSTRUCTURED_GRID")

    facets = np.zeros((0, 4), dtype=np.int64)
    facet_line = None
    save = lines.i
    nxt = lines.next()
    if nxt is not None and nxt.upper().startswith("FIELD"):
        lines.i = save
        toks = lines.expect("FIELD")
        for _ in range(lines.int_arg(toks, 2)):
            head = lines.next().split()
            if len(head) != 4:
                raise lines.error("malformed field header")
            ntup, ncomp = lines.int_arg(head, 2), lines.int_arg(head, 1)
            data, first = lines.table(ntup, ncomp, np.int64)
            if head[0] == "surface_labels":
                if ncomp != 4:
                    raise lines.error("surface_labels must have 4 components")
                facets, facet_line = data, first
    else:
        lines.i = save

    toks = lines.expect("POINTS")
    n = lines.int_arg(toks, 1)
    nodes, _ = lines.table(n, 3, float)
    toks = lines.expect("CELLS")
    m = lines.int_arg(toks, 1)
    cells, cell_line = lines.table(m, 5, np.int64)
    if np.any(cells[:, 0] != 4):
        bad = int(np.flatnonzero(cells[:, 0] != 4)[0])
        raise lines.error("only tetrahedral cells are supported", line=cell_line + bad)
    tets = cells[:, 1:]
    for arr, first, what in ((tets, cell_line, "cell"), (facets[:, :3], facet_line, "facet")):
        bad = np.flatnonzero(np.any((arr < 0) | (arr >= n), axis=1))
        if len(bad):
            raise lines.error(f"{what} references node index outside [0, {n})", line=first + int(bad[0]))
    toks = lines.expect("CELL_TYPES")
    types, _ = lines.table(lines.int_arg(toks, 1), 1, np.int64)
    if np.any(types != VTK_TETRA):
        raise lines.error("only VTK_TETRA (10) cell types are supported")

    cell_data, point_data = {}, {}
    while True:
        line = lines.next()
        if line is None:
            break
        toks = line.split()
        key = toks[0].upper()
        if key == "CELL_DATA":
            cell_data.update(_read_field(lines, lines.int_arg(toks, 1)))
        elif key == "POINT_DATA":
            point_data.update(_read_field(lines, lines.int_arg(toks, 1)))
        else:
            raise lines.error(f"unexpected section {toks[0]!r}")

    labels = facets[:, 3]
    bad = np.flatnonzero(~np.isin(labels, sorted(KNOWN_FACET_LABELS)))
    if len(bad):
        raise ValidationError(f"unknown surface label {int(labels[bad[0]])} at line {facet_line + int(bad[0])}")
    regions = np.asarray(cell_data.pop("region", np.full(m, 1)), dtype=np.int64)
    bad = np.flatnonzero(~np.isin(regions, sorted(KNOWN_REGION_LABELS)))
    if len(bad):
        raise ValidationError(f"unknown region label {int(regions[bad[0]])} in cell {int(bad[0])}")

    tets, flipped = orient_tets(nodes, tets)
    if flipped:
        warnings.warn(f"repaired orientation of {flipped} negatively oriented tet(s)", stacklevel=3)
    mesh = TetMesh(nodes, tets, facets[:, :3], labels, regions)
    return VTKData(mesh, point_data, cell_data, title)


def read_vtk(path):
    path = Path(path)
    return parse_vtk(path.read_text(), path=str(path))


def read_mesh(path):
    return read_vtk(path).mesh
