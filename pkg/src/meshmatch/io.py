"""Mesh file readers and writers (OFF, OBJ, PLY ascii and binary).

Only triangle meshes are handled; polygon faces are rejected. Loaders drop
isolated vertices with a warning so downstream topology code can assume every
vertex sits in at least one triangle.
"""

import logging
import os

import numpy as np

from .mesh import MeshIOError, TriMesh

logger = logging.getLogger(__name__)

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _drop_isolated(vertices, triangles, path):
    used = np.zeros(len(vertices), dtype=bool)
    if len(triangles):
        used[np.asarray(triangles).reshape(-1)] = True
    n_iso = int((~used).sum())
    if n_iso == 0:
        return vertices, triangles
    logger.warning("%s: dropping %d isolated vertices", path, n_iso)
    new_id = np.cumsum(used) - 1
    return vertices[used], new_id[triangles]


def _tokens(handle):
    """Yield whitespace tokens line by line, skipping comments."""
    for raw in handle:
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line.split()


def _load_off(path):
    with open(path, "r", errors="replace") as handle:
        toks = _tokens(handle)
        try:
            header = next(toks)
        except StopIteration:
            raise MeshIOError("%s: empty OFF file" % path) from None
        if header[0] != "OFF":
            raise MeshIOError("%s: missing OFF header" % path)
        if len(header) >= 4:
            counts = header[1:4]
        else:
            counts = next(toks)
        try:
            n_v, n_f = int(counts[0]), int(counts[1])
        except (ValueError, IndexError):
            raise MeshIOError("%s: bad OFF count line" % path) from None
        verts = np.empty((n_v, 3))
        for i in range(n_v):
            row = next(toks, None)
            if row is None or len(row) < 3:
                raise MeshIOError("%s: truncated OFF vertex block" % path)
            verts[i] = [float(row[0]), float(row[1]), float(row[2])]
        faces = np.empty((n_f, 3), dtype=np.int64)
        for i in range(n_f):
            row = next(toks, None)
            if row is None:
                raise MeshIOError("%s: truncated OFF face block" % path)
            if int(row[0]) != 3:
                raise MeshIOError("%s: face with %s corners, only triangles "
                                  "are supported" % (path, row[0]))
            faces[i] = [int(row[1]), int(row[2]), int(row[3])]
    return verts, faces


def _load_obj(path):
    verts = []
    faces = []
    with open(path, "r", errors="replace") as handle:
        for raw in handle:
            line = raw.strip()
            if not line or line[0] == "#":
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshIOError("%s: short vertex line" % path)
                verts.append((float(parts[1]), float(parts[2]),
                              float(parts[3])))
            elif parts[0] == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise MeshIOError("%s: face with %d corners, only "
                                      "triangles are supported"
                                      % (path, len(refs)))
                corner = []
                for ref in refs:
                    idx = ref.split("/", 1)[0]
                    value = int(idx)
                    if value <= 0:
                        raise MeshIOError("%s: non positive OBJ index %s"
                                          % (path, idx))
                    corner.append(value - 1)
                faces.append(corner)
    if not verts:
        raise MeshIOError("%s: no vertices found" % path)
    return np.asarray(verts, dtype=np.float64), np.asarray(faces,
                                                           dtype=np.int64)


def _parse_ply_header(handle, path):
    magic = handle.readline().strip()
    if magic != b"ply":
        raise MeshIOError("%s: missing ply magic" % path)
    fmt = None
    elements = []
    while True:
        raw = handle.readline()
        if not raw:
            raise MeshIOError("%s: unterminated ply header" % path)
        parts = raw.decode("ascii", "replace").strip().split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]),
                             "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MeshIOError("%s: property before element" % path)
            elements[-1]["props"].append(parts[1:])
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshIOError("%s: unsupported ply format %r" % (path, fmt))
    return fmt, elements


def _load_ply(path):
    with open(path, "rb") as handle:
        fmt, elements = _parse_ply_header(handle, path)
        verts = None
        faces = None
        for elem in elements:
            if elem["name"] == "vertex":
                names = [p[-1] for p in elem["props"]]
                if any(len(p) != 2 for p in elem["props"]):
                    raise MeshIOError("%s: list property on vertex element"
                                      % path)
                for axis in ("x", "y", "z"):
                    if axis not in names:
                        raise MeshIOError("%s: vertex element lacks %s"
                                          % (path, axis))
                if fmt == "ascii":
                    rows = [handle.readline().split()
                            for _ in range(elem["count"])]
                    data = np.asarray(rows, dtype=np.float64)
                    verts = data[:, [names.index("x"), names.index("y"),
                                     names.index("z")]]
                else:
                    dt = np.dtype([(p[-1], "<" + _PLY_SCALARS[p[0]])
                                   for p in elem["props"]])
                    buf = handle.read(dt.itemsize * elem["count"])
                    if len(buf) != dt.itemsize * elem["count"]:
                        raise MeshIOError("%s: truncated vertex data" % path)
                    rec = np.frombuffer(buf, dtype=dt)
                    verts = np.column_stack(
                        [rec["x"], rec["y"], rec["z"]]).astype(np.float64)
            elif elem["name"] == "face":
                if len(elem["props"]) != 1 or elem["props"][0][0] != "list":
                    raise MeshIOError("%s: face element must be a single "
                                      "index list" % path)
                _, count_t, index_t, _name = elem["props"][0]
                if fmt == "ascii":
                    rows = []
                    for _ in range(elem["count"]):
                        parts = handle.readline().split()
                        if int(parts[0]) != 3:
                            raise MeshIOError("%s: non triangle face" % path)
                        rows.append(parts[1:4])
                    faces = np.asarray(rows, dtype=np.int64)
                else:
                    dt = np.dtype([("n", "<" + _PLY_SCALARS[count_t]),
                                   ("idx", "<" + _PLY_SCALARS[index_t], (3,))])
                    buf = handle.read(dt.itemsize * elem["count"])
                    if len(buf) != dt.itemsize * elem["count"]:
                        raise MeshIOError("%s: truncated face data" % path)
                    rec = np.frombuffer(buf, dtype=dt)
                    if elem["count"] and not np.all(rec["n"] == 3):
                        raise MeshIOError("%s: non triangle face" % path)
                    faces = rec["idx"].astype(np.int64)
            else:
                if fmt != "ascii":
                    raise MeshIOError("%s: unsupported extra element %r in "
                                      "binary ply" % (path, elem["name"]))
                for _ in range(elem["count"]):
                    handle.readline()
    if verts is None or faces is None:
        raise MeshIOError("%s: ply file lacks vertex or face element" % path)
    return verts, faces


def load_mesh(path):
    """Load a triangle mesh, dispatching on the file extension.

    Supports .off, .obj and .ply (ascii or binary little endian). Isolated
    vertices are dropped with a warning.
    """
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".off":
            verts, faces = _load_off(path)
        elif ext == ".obj":
            verts, faces = _load_obj(path)
        elif ext == ".ply":
            verts, faces = _load_ply(path)
        else:
            raise MeshIOError("unsupported mesh extension %r" % ext)
    except (ValueError, IndexError, KeyError) as exc:
        if isinstance(exc, MeshIOError):
            raise
        raise MeshIOError("%s: parse error: %s" % (path, exc)) from exc
    if np.asarray(faces).size and np.asarray(faces).min() < 0:
        raise MeshIOError("%s: negative face index" % path)
    if np.asarray(faces).size and np.asarray(faces).max() >= len(verts):
        raise MeshIOError("%s: face index out of range" % path)
    verts, faces = _drop_isolated(np.asarray(verts, dtype=np.float64),
                                  np.asarray(faces, dtype=np.int64), path)
    try:
        return TriMesh(verts, faces)
    except ValueError as exc:
        raise MeshIOError("%s: %s" % (path, exc)) from exc


def _fmt(x):
    return format(x, ".17g")


def save_mesh(path, mesh, binary=True):
    """Write a mesh, dispatching on the file extension.

    OFF and OBJ are text formats written with 17 significant digits, which
    round trips float64 exactly. PLY is written binary little endian with
    float64 coordinates unless ``binary`` is false.
    """
    ext = os.path.splitext(path)[1].lower()
    v = mesh.vertices
    t = mesh.triangles
    if ext == ".off":
        with open(path, "w") as out:
            out.write("OFF\n%d %d %d\n" % (len(v), len(t), 0))
            for p in v:
                out.write("%s %s %s\n" % (_fmt(p[0]), _fmt(p[1]), _fmt(p[2])))
            for f in t:
                out.write("3 %d %d %d\n" % (f[0], f[1], f[2]))
    elif ext == ".obj":
        with open(path, "w") as out:
            for p in v:
                out.write("v %s %s %s\n"
                          % (_fmt(p[0]), _fmt(p[1]), _fmt(p[2])))
            for f in t:
                out.write("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))
    elif ext == ".ply":
        if binary:
            with open(path, "wb") as out:
                header = ("ply\nformat binary_little_endian 1.0\n"
                          "element vertex %d\n"
                          "property double x\nproperty double y\n"
                          "property double z\n"
                          "element face %d\n"
                          "property list uchar int vertex_indices\n"
                          "end_header\n" % (len(v), len(t)))
                out.write(header.encode("ascii"))
                out.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
                rec = np.empty(len(t), dtype=np.dtype(
                    [("n", "u1"), ("idx", "<i4", (3,))]))
                rec["n"] = 3
                rec["idx"] = t
                out.write(rec.tobytes())
        else:
            with open(path, "w") as out:
                out.write("ply\nformat ascii 1.0\n"
                          "element vertex %d\n"
                          "property double x\nproperty double y\n"
                          "property double z\n"
                          "element face %d\n"
                          "property list uchar int vertex_indices\n"
                          "end_header\n" % (len(v), len(t)))
                for p in v:
                    out.write("%s %s %s\n"
                              % (_fmt(p[0]), _fmt(p[1]), _fmt(p[2])))
                for f in t:
                    out.write("3 %d %d %d\n" % (f[0], f[1], f[2]))
    else:
        raise MeshIOError("unsupported mesh extension %r" % ext)


def write_int_column(path, values):
    """Write one integer per line (point maps, ground truth, cell labels)."""
    with open(path, "w") as out:
        for v in np.asarray(values).reshape(-1):
            out.write("%d\n" % v)


def read_int_column(path):
    try:
        data = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise MeshIOError("%s: %s" % (path, exc)) from exc
    return data.reshape(-1)
