"""Command-line driver: sample | run | render | verify | stats.

Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical failure,
4 invariant violation.  All outputs are deterministic functions of their
inputs, including the SVG.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import pointproc
from .allocation import UNCLAIMED, UNDEFINED, check_stability
from .conformal import build_map, trace_boundary
from .errors import (ConformalError, DataError, InvariantError,
                     NumericalError, PlanallocError, UsageError)
from .msf import EuclideanMSF, extract_faces, hull_area, sector_angles
from .pipeline import (AppetiteMode, ConnectedAllocation, compute_appetites,
                       discretize_face, satedness_report, verify_connectivity,
                       _mapped_contiguity)

ALLOC_MAGIC = "# planalloc allocation v1"
OWNER_TOKENS = {UNCLAIMED: "UNCLAIMED", UNDEFINED: "UNDEFINED"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_domain(text: str) -> pointproc.Domain:
    if text == "disk":
        return pointproc.Domain.disk()
    if text.startswith("rect:"):
        try:
            w, h = text[len("rect:"):].split("x")
            return pointproc.Domain.rectangle(0.0, 0.0, float(w), float(h))
        except ValueError:
            pass
    raise UsageError(f"bad --domain {text!r}; use disk or rect:WxH")


def build_parser() -> _Parser:
    p = _Parser(prog="planalloc",
                description="Connected allocation of planar area to point centers")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("sample", help="generate a points file")
    g = ps.add_mutually_exclusive_group(required=True)
    g.add_argument("--n", type=int, help="exact point count (uniform)")
    g.add_argument("--intensity", type=float, help="Poisson intensity")
    ps.add_argument("--domain", default="disk", help="disk or rect:WxH")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("-o", "--output", default=None)

    pr = sub.add_parser("run", help="run the full allocation pipeline")
    pr.add_argument("points")
    pr.add_argument("--grid", type=float, required=True, help="cell side h")
    pr.add_argument("--mode", choices=["figure", "ideal"], default="figure")
    pr.add_argument("--spacing", type=float, default=None,
                    help="boundary sample spacing (default: per-face auto)")
    pr.add_argument("-o", "--output", required=True, help="allocation file")
    pr.add_argument("--report", default=None,
                    help="diagnostics report path (default: OUTPUT.report.txt)")

    pv = sub.add_parser("render", help="render an allocation to SVG")
    pv.add_argument("allocation")
    pv.add_argument("points")
    pv.add_argument("-o", "--output", required=True)
    pv.add_argument("--no-tree", action="store_true")
    pv.add_argument("--no-points", action="store_true")
    pv.add_argument("--width", type=int, default=900)

    pc = sub.add_parser("verify", help="check all invariants of an allocation file")
    pc.add_argument("allocation")
    pc.add_argument("points")
    pc.add_argument("--spacing", type=float, default=None)

    pt = sub.add_parser("stats", help="corner-image gap statistics per face")
    pt.add_argument("points")
    pt.add_argument("--spacing", type=float, default=None)
    return p


# ---------------------------------------------------------------- sample

def cmd_sample(args) -> int:
    domain = _parse_domain(args.domain)
    if args.n is not None:
        if args.n < 1:
            raise UsageError("--n must be at least 1")
        sample = pointproc.sample_uniform_count(domain, args.n, args.seed)
    else:
        if args.intensity < 0:
            raise UsageError("--intensity must be nonnegative")
        sample = pointproc.sample_poisson(domain, args.intensity, args.seed)
    if args.output:
        pointproc.write_points(sample, args.output)
    else:
        sys.stdout.write(pointproc.format_points(sample))
    return 0


# ---------------------------------------------------------------- run

def write_allocation(path, alloc) -> None:
    order = np.lexsort((alloc.iy, alloc.ix, alloc.face_id))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ALLOC_MAGIC + "\n")
        fh.write(f"# h: {alloc.h:.17g}\n")
        fh.write(f"# mode: {alloc.mode}\n")
        fh.write(f"# points: {alloc.n_points}\n")
        fh.write(f"# faces: {alloc.n_faces}\n")
        fh.write("# columns: face ix iy owner\n")
        for i in order:
            o = int(alloc.owner[i])
            tok = OWNER_TOKENS.get(o, str(o))
            fh.write(f"{alloc.face_id[i]}\t{alloc.ix[i]}\t{alloc.iy[i]}\t{tok}\n")


def read_allocation(path) -> dict:
    header: dict = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != ALLOC_MAGIC:
            raise DataError(f"{path}: not a planalloc allocation file")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                for key in ("h", "mode", "points", "faces"):
                    tag = key + ":"
                    if body.startswith(tag):
                        header[key] = body[len(tag):].strip()
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            try:
                face, ix, iy = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad cell record {line!r}")
            tok = parts[3]
            if tok == "UNCLAIMED":
                owner = UNCLAIMED
            elif tok == "UNDEFINED":
                owner = UNDEFINED
            else:
                try:
                    owner = int(tok)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad owner {tok!r}")
            rows.append((face, ix, iy, owner))
    for key in ("h", "mode", "points", "faces"):
        if key not in header:
            raise DataError(f"{path}: missing header field {key!r}")
    arr = np.array(rows, dtype=int).reshape(-1, 4)
    return {
        "h": float(header["h"]),
        "mode": header["mode"],
        "n_points": int(header["points"]),
        "n_faces": int(header["faces"]),
        "face_id": arr[:, 0],
        "ix": arr[:, 1],
        "iy": arr[:, 2],
        "owner": arr[:, 3],
    }


def _report_lines(model: ConnectedAllocation) -> list[str]:
    alloc = model.global_
    conn = model.connectivity_report()
    sat = model.satedness_report()
    stab = model.stability_reports()
    lines = [
        f"points: {alloc.n_points}",
        f"faces: {alloc.n_faces}",
        f"h: {alloc.h:.17g}",
        f"mode: {alloc.mode}",
        f"hull_area: {hull_area(model.X_):.12g}",
        f"total_cells: {len(alloc.owner)}",
        f"claimed_cells: {int(np.sum(alloc.owner >= 0))}",
        f"unclaimed_cells: {int(np.sum(alloc.owner == UNCLAIMED))}",
        f"undefined_cells: {int(np.sum(alloc.owner == UNDEFINED))}",
        f"unclaimed_measure: {alloc.unclaimed_measure:.12g}",
        f"connected_fraction: {conn['connected_fraction']:.6f}",
        f"unsated_centers: {sat['unsated_centers']}",
        f"dichotomy_violations: {len(sat['dichotomy_violations'])}",
        f"all_faces_stable: {all(ok for _, ok, _ in stab)}",
    ]
    for st in alloc.face_stats:
        if st.get("undefined"):
            lines.append(f"face {st['face']}: UNDEFINED cells={st['cells']} "
                         f"corners={st['corners']}")
            continue
        lines.append(
            f"face {st['face']}: cells={st['cells']} corners={st['corners']} "
            f"area={st['area']:.6g} capacity={st['capacity']} "
            f"unclaimed={st['unclaimed']} unsated={st['unsated']} "
            f"ties={st['ties']} jittered={st['jittered']} "
            f"clamped={st['clamped']} spacing={st['spacing']:.3g} "
            f"residual={st['residual']:.3g}")
    return lines


def cmd_run(args) -> int:
    sample = pointproc.read_points(args.points)
    if len(sample) == 0:
        raise DataError(f"{args.points}: no points")
    if args.grid <= 0:
        raise UsageError("--grid must be positive")
    model = ConnectedAllocation(h=args.grid, mode=args.mode,
                                max_spacing=args.spacing).fit(sample.points)
    write_allocation(args.output, model.global_)
    report = args.report or (args.output + ".report.txt")
    with open(report, "w", encoding="utf-8") as fh:
        fh.write("\n".join(_report_lines(model)) + "\n")
    undefined = [st["face"] for st in model.global_.face_stats
                 if st.get("undefined")]
    if undefined:
        print(f"warning: faces marked UNDEFINED: {undefined}", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------- render

def _hsl_to_rgb(hue: float, s: float, light: float) -> str:
    c = (1 - abs(2 * light - 1)) * s
    x = c * (1 - abs((hue / 60.0) % 2 - 1))
    m = light - c / 2
    sector = int(hue // 60) % 6
    r, g, b = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][sector]
    to8 = lambda v: max(0, min(255, int(round((v + m) * 255))))
    return f"#{to8(r):02x}{to8(g):02x}{to8(b):02x}"


def owner_color(owner: int) -> str:
    hue = (owner * 137.50776405003785) % 360.0
    return _hsl_to_rgb(hue, 0.62, 0.55)


def cmd_render(args) -> int:
    rec = read_allocation(args.allocation)
    sample = pointproc.read_points(args.points)
    if rec["n_points"] != len(sample):
        raise DataError("allocation and points files disagree on point count")
    h = rec["h"]
    forest = EuclideanMSF().fit(sample.points)
    xs = np.concatenate([(rec["ix"] + 0.5) * h, sample.points[:, 0]])
    ys = np.concatenate([(rec["iy"] + 0.5) * h, sample.points[:, 1]])
    pad = 2 * h
    x0, x1 = xs.min() - pad, xs.max() + pad
    y0, y1 = ys.min() - pad, ys.max() + pad
    width = args.width
    scale = width / (x1 - x0)
    height = int(math.ceil((y1 - y0) * scale))

    def sx(x):
        return (x - x0) * scale

    def sy(y):
        return (y1 - y) * scale

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
               f'height="{height}" viewBox="0 0 {width} {height}">')
    out.append('<defs><pattern id="hatch" width="6" height="6" '
               'patternTransform="rotate(45)" patternUnits="userSpaceOnUse">'
               '<rect width="6" height="6" fill="#ffffff"/>'
               '<line x1="0" y1="0" x2="0" y2="6" stroke="#888888" '
               'stroke-width="2"/></pattern></defs>')
    out.append(f'<rect x="0" y="0" width="{width}" height="{height}" '
               'fill="#ffffff"/>')
    side = h * scale
    order = np.lexsort((rec["iy"], rec["ix"], rec["face_id"]))
    for i in order:
        o = int(rec["owner"][i])
        if o == UNCLAIMED:
            continue
        fill = "url(#hatch)" if o == UNDEFINED else owner_color(o)
        cx = sx(rec["ix"][i] * h)
        cy = sy((rec["iy"][i] + 1) * h)
        out.append(f'<rect x="{cx:.3f}" y="{cy:.3f}" width="{side + 0.35:.3f}" '
                   f'height="{side + 0.35:.3f}" fill="{fill}"/>')
    if not args.no_tree:
        for i, j in forest.edges_:
            out.append(
                f'<line x1="{sx(sample.points[i, 0]):.3f}" '
                f'y1="{sy(sample.points[i, 1]):.3f}" '
                f'x2="{sx(sample.points[j, 0]):.3f}" '
                f'y2="{sy(sample.points[j, 1]):.3f}" '
                'stroke="#000000" stroke-width="1.2"/>')
    if not args.no_points:
        for x, y in sample.points:
            out.append(f'<circle cx="{sx(x):.3f}" cy="{sy(y):.3f}" r="2.0" '
                       'fill="#000000"/>')
    out.append("</svg>")
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    return 0


# ---------------------------------------------------------------- verify

def verify_allocation(sample: pointproc.PointSample, rec: dict,
                      spacing: float | None = None) -> tuple[bool, list[str]]:
    """Re-derive the geometry and audit the file's cell ownership."""
    X = sample.points
    msgs: list[str] = []
    ok = True
    if rec["n_points"] != len(X):
        raise DataError("allocation and points files disagree on point count")
    h, mode = rec["h"], rec["mode"]
    forest = EuclideanMSF().fit(X)
    faces = extract_faces(X, forest)
    if rec["n_faces"] != len(faces):
        raise DataError("allocation header face count does not match geometry")
    appetites = compute_appetites(faces, AppetiteMode(mode))

    # angle closure at interior vertices
    from .msf import convex_hull, TWO_PI
    hull = set(convex_hull(X).tolist())
    angles = sector_angles(X, faces)
    for v, lst in angles.items():
        if v in hull:
            continue
        total = sum(a for _, a in lst)
        if abs(total - TWO_PI) > 1e-9:
            ok = False
            msgs.append(f"angle closure violated at vertex {v}: {total!r}")
            break
    # appetite closure
    for face in faces:
        app = appetites[face.id]
        if AppetiteMode(mode) is AppetiteMode.FIGURE:
            if abs(app.sum() - face.area) > 1e-9 * max(1.0, face.area):
                ok = False
                msgs.append(f"appetite closure violated on face {face.id}")

    by_face = {}
    for k in range(len(rec["owner"])):
        by_face.setdefault(int(rec["face_id"][k]), []).append(k)

    model = ConnectedAllocation(h=h, mode=mode, max_spacing=spacing)
    # reuse the pipeline pieces without recomputing an assignment wholesale
    undefined_faces = []
    for face in faces:
        grid = discretize_face(face, h)
        idx = by_face.get(face.id, [])
        file_cells = {(int(rec["ix"][k]), int(rec["iy"][k])): int(rec["owner"][k])
                      for k in idx}
        grid_cells = set(zip(grid.ix.tolist(), grid.iy.tolist()))
        if set(file_cells) != grid_cells:
            raise DataError(f"face {face.id}: allocation cells do not match "
                            f"the grid at h={h}")
        owners_file = np.array([file_cells[(cx, cy)]
                                for cx, cy in zip(grid.ix, grid.iy)], dtype=int)
        if np.all(owners_file == UNDEFINED):
            undefined_faces.append(face.id)
            continue
        chain, _ = model._build_chain(face)
        if chain is None:
            ok = False
            msgs.append(f"face {face.id}: map construction failed during verify")
            continue
        res = _recheck_face(face, chain, grid, appetites[face.id], owners_file)
        if res is not None:
            ok = False
            msgs.append(f"face {face.id}: {res}")

    galloc = _global_from_records(rec, len(X), len(faces), h, mode, faces,
                                  appetites)
    conn = verify_connectivity(galloc, X)
    sat = satedness_report(galloc)
    if sat["dichotomy_violations"]:
        ok = False
        msgs.append(f"dichotomy violated on faces {sat['dichotomy_violations']}")
    msgs.append(f"connected_fraction: {conn['connected_fraction']:.6f}")
    msgs.append(f"unclaimed_measure: {galloc.unclaimed_measure:.12g}")
    msgs.append(f"undefined_faces: {undefined_faces}")
    return ok, msgs


def _recheck_face(face, chain, grid, appetites, owners_file) -> str | None:
    """Audit one face's file ownership for stability on the mapped sites."""
    from .pipeline import run_face
    res = run_face(face, chain, grid, appetites)
    engine_vertex = np.where(res.assignment.owner >= 0,
                             res.center_vertices[np.maximum(res.assignment.owner, 0)],
                             res.assignment.owner)
    sector_owner = res.assignment.owner.copy()
    mism = np.flatnonzero(engine_vertex != owners_file)
    for i in mism:
        v = owners_file[i]
        if v < 0:
            sector_owner[i] = v
            continue
        cand = np.flatnonzero(res.center_vertices == v)
        if len(cand) == 0:
            return f"cell owned by vertex {v} which is not a corner of the face"
        d = np.abs(res.mapped[i] - res.center_positions[cand])
        sector_owner[i] = int(cand[np.argmin(d)])
    dist = np.abs(res.mapped.reshape(-1, 1)
                  - res.center_positions.reshape(1, -1).astype(complex))
    oks, cert = check_stability(dist, res.assignment.capacity_cells, sector_owner)
    if not oks:
        return f"stability violated: {cert}"
    res_check = FaceShim(res, sector_owner)
    okc, certc = _mapped_contiguity(res_check)
    if not okc:
        return f"territory contiguity violated: {certc}"
    return None


class FaceShim:
    """FaceResult view with substituted owners, for the contiguity audit."""

    def __init__(self, res, owner):
        self.mapped = res.mapped
        self.center_positions = res.center_positions

        class _A:  # minimal assignment stand-in
            pass

        self.assignment = _A()
        self.assignment.owner = owner


def _global_from_records(rec, n_points, n_faces, h, mode, faces, appetites):
    from .pipeline import GlobalAllocation
    claimed = np.zeros(n_points)
    owners = rec["owner"]
    valid = owners >= 0
    np.add.at(claimed, owners[valid], h * h)
    vertex_appetite = np.zeros(n_points)
    for face in faces:
        np.add.at(vertex_appetite, face.darts[:, 0], appetites[face.id])
    stats = []
    for f in faces:
        sel = rec["face_id"] == f.id
        o = owners[sel]
        stats.append({
            "face": f.id, "cells": int(sel.sum()),
            "undefined": bool(np.all(o == UNDEFINED)) and sel.any(),
            "area": f.area, "corners": len(f), "jittered": 0,
            "unclaimed": int(np.sum(o == UNCLAIMED)),
            "capacity": int(np.rint(appetites[f.id] / (h * h)).sum()),
            "unsated": max(0, int(np.rint(appetites[f.id] / (h * h)).sum())
                           - int(np.sum(o >= 0))),
        })
    return GlobalAllocation(
        h=h, mode=mode, n_points=n_points, n_faces=n_faces,
        face_id=rec["face_id"], ix=rec["ix"], iy=rec["iy"], owner=owners,
        tie=np.zeros(len(owners), dtype=bool),
        claimed_measure=claimed, vertex_appetite=vertex_appetite,
        face_stats=stats)


def cmd_verify(args) -> int:
    rec = read_allocation(args.allocation)
    sample = pointproc.read_points(args.points)
    ok, msgs = verify_allocation(sample, rec, args.spacing)
    for m in msgs:
        print(m)
    if not ok:
        raise InvariantError("verification failed: " + "; ".join(
            m for m in msgs if "violated" in m or "failed" in m))
    print("verify: OK")
    return 0


# ---------------------------------------------------------------- stats

def cmd_stats(args) -> int:
    sample = pointproc.read_points(args.points)
    if len(sample) < 3:
        raise DataError("need at least three points")
    X = sample.points
    forest = EuclideanMSF().fit(X)
    faces = extract_faces(X, forest)
    overall = 0.0
    for face in faces:
        spacing = args.spacing or float(face.step_lengths().min()) / 4.0
        try:
            chain = build_map(trace_boundary(face, spacing))
        except ConformalError as e:
            print(f"face {face.id}: map failed ({e})")
            continue
        gs = chain.gap_stats()
        finite_ratio = gs.ratio if np.isfinite(gs.ratio) else float("inf")
        overall = max(overall, finite_ratio)
        print(f"face {face.id}: corners={len(chain.corner_images_)} "
              f"gap_min={gs.min:.6g} gap_max={gs.max:.6g} ratio={gs.ratio:.6g}")
        print("  normalized_gaps: "
              + " ".join(f"{g:.3g}" for g in gs.normalized))
        print("  log10_histogram: " + _log_histogram(gs.normalized))
    print(f"max_gap_ratio: {overall:.6g}")
    return 0


def _log_histogram(normalized: np.ndarray) -> str:
    vals = normalized[normalized > 0]
    if len(vals) == 0:
        return "(empty)"
    logs = np.log10(vals)
    lo = int(np.floor(logs.min()))
    buckets: dict[int, int] = {}
    for v in logs:
        buckets[int(np.floor(v))] = buckets.get(int(np.floor(v)), 0) + 1
    return " ".join(f"1e{k}:{buckets[k]}" for k in sorted(buckets))


# ---------------------------------------------------------------- main

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "sample": cmd_sample,
            "run": cmd_run,
            "render": cmd_render,
            "verify": cmd_verify,
            "stats": cmd_stats,
        }[args.command]
        return handler(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except PlanallocError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
