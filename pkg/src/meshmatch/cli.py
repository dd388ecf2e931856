"""Command line front end for the matching pipeline.

Subcommands cover the whole chain: ``remesh`` coarsens one mesh,
``match`` maps a source mesh onto a target, ``transfer`` carries a per
vertex function through a computed match, ``perturb`` synthesizes
benchmark pairs by resampling vertices inside their incident triangles,
and ``eval`` scores a manifest of pairs against ground truth.

Every subcommand is a pure function of its inputs, the resolved
configuration and the seed: reruns reproduce all outputs byte for byte,
except timing files, which record wall clock measurements. Config values
resolve as flags > config file > defaults; ``--dump-config`` prints the
resolved configuration and exits without running.

Exit codes: 0 success, 2 usage or config error, 3 unreadable or
unwritable files, 4 topological precondition failures, 5 numerical
non convergence.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import (evaluate_manifest, parse_manifest, perturb_vertices,
                    perturbation_groundtruth, timing_report, write_eval_csv,
                    write_timing_csv)
from .fmap import load_fmap, save_fmap
from .mesh import MeshIOError, TopologyError
from .pipeline import (DESCRIPTOR_KINDS, StageTimer, dump_config,
                       load_config_file, resolve_config, run_match_job,
                       run_remesh_job, transfer_function)
from .prolongation import load_prolongation, save_prolongation
from .remesh import ConvergenceError
from .spectral import EigensolverError, build_laplacian, eigenbasis

logger = logging.getLogger(__name__)

_CONFIG_KEYS = ("s", "seed", "resample", "component_area_threshold",
                "k0", "step", "k_final", "descriptor", "descriptor_count",
                "threads")
_MESH_PATTERNS = ("*.off", "*.obj", "*.ply")


def _write_timing_json(path, records):
    rows, _ = timing_report(records)
    stages = {}
    for _, stage, seconds in rows:
        stages[stage] = stages.get(stage, 0.0) + seconds
    doc = {"stages": stages, "total": float(sum(stages.values()))}
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")


def cmd_remesh(args, config):
    mesh = io.load_mesh(args.input)
    timer = StageTimer(Path(args.input).stem)
    out = run_remesh_job(mesh, config, timer=timer)
    base = os.path.splitext(args.out)[0]
    io.save_mesh(args.out, out.lowres)
    io.write_int_column(base + ".cells.txt", out.cell_of)
    io.write_int_column(base + ".generators.txt", out.generator_of)
    with open(base + ".config.json", "w") as handle:
        handle.write(dump_config(config))
    _write_timing_json(base + ".timing.json", timer.records)
    return 0


def cmd_match(args, config):
    mesh_src = io.load_mesh(args.source)
    mesh_tgt = io.load_mesh(args.target)
    pair = "%s:%s" % (Path(args.source).stem, Path(args.target).stem)
    result = run_match_job(mesh_src, mesh_tgt, config, pair=pair)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as handle:
        handle.write(dump_config(config))
    io.write_int_column(out / "pointmap.txt", result.pointmap)
    save_fmap(out / "fmap.txt", result.fmap)
    for side, res, u in (("src", result.remesh_src, result.u_src),
                         ("tgt", result.remesh_tgt, result.u_tgt)):
        io.save_mesh(str(out / ("%s.lowres.off" % side)), res.lowres)
        io.write_int_column(out / ("%s.cells.txt" % side), res.cell_of)
        io.write_int_column(out / ("%s.generators.txt" % side),
                            res.generator_of)
        save_prolongation(out / ("%s.prol" % side), u)
    write_timing_csv(out / "timing.csv", result.records)
    return 0


def cmd_transfer(args, config):
    """Transfer a function file through a finished match directory.

    The coarse eigenbases are recomputed from the stored coarse meshes;
    both the meshes and the solver are deterministic, so the bases agree
    with the ones the match was computed in.
    """
    art = Path(args.artifacts)
    c = load_fmap(art / "fmap.txt")
    u_src = load_prolongation(art / "src.prol")
    u_tgt = load_prolongation(art / "tgt.prol")
    low_src = io.load_mesh(str(art / "src.lowres.off"))
    low_tgt = io.load_mesh(str(art / "tgt.lowres.off"))
    kt, ks = c.shape
    basis_src = eigenbasis(build_laplacian(low_src), ks)
    basis_tgt = eigenbasis(build_laplacian(low_tgt), kt)
    try:
        values = np.loadtxt(args.function, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise MeshIOError("%s: %s" % (args.function, exc)) from exc
    out = transfer_function(values, c, u_src, u_tgt, basis_src, basis_tgt)
    with open(args.out, "w") as handle:
        for row in out:
            handle.write(" ".join(io._fmt(v) for v in row) + "\n")
    return 0


def cmd_perturb(args, config):
    """Build a perturbed copy of every mesh plus all pairwise ground truths.

    Inputs must share one triangulation (a pose class). Ground truth for
    the ordered pair (i, j) matches both barycentric resamplings on the
    source pose by exact nearest neighbor. A manifest listing every pair
    and a seed log land next to the meshes.
    """
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise MeshIOError("not a directory: %s" % in_dir)
    paths = sorted(p for pat in _MESH_PATTERNS for p in in_dir.glob(pat))
    if not paths:
        raise MeshIOError("no meshes found in %s" % in_dir)
    out_dir = Path(args.out_dir)
    if out_dir.resolve() == in_dir.resolve():
        raise ValueError("output directory must differ from the input "
                         "directory")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        raise MeshIOError("duplicate mesh stems in %s" % in_dir)

    meshes = [io.load_mesh(str(p)) for p in paths]
    first = meshes[0]
    for path, mesh in zip(paths[1:], meshes[1:]):
        if (mesh.n_vertices != first.n_vertices
                or not np.array_equal(mesh.triangles, first.triangles)):
            raise TopologyError("%s does not share the class connectivity"
                                % path)

    out_dir.mkdir(parents=True, exist_ok=True)
    perturbations = []
    streams = {}
    for i, (stem, mesh) in enumerate(zip(stems, meshes)):
        rng = np.random.default_rng((config.seed, i))
        perturbed, u = perturb_vertices(mesh, rng=rng)
        io.save_mesh(str(out_dir / (stem + ".off")), perturbed)
        perturbations.append(u)
        streams[stem] = [config.seed, i]

    lines = []
    for i, si in enumerate(stems):
        for j, sj in enumerate(stems):
            if i == j:
                continue
            gt = perturbation_groundtruth(meshes[i], perturbations[i],
                                          perturbations[j])
            gt_name = "%s__%s.gt.txt" % (si, sj)
            io.write_int_column(out_dir / gt_name, gt)
            lines.append("%s.off %s.off %s\n" % (si, sj, gt_name))
    with open(out_dir / "manifest.txt", "w") as handle:
        handle.writelines(lines)
    with open(out_dir / "seeds.json", "w") as handle:
        json.dump({"seed": config.seed, "streams": streams}, handle,
                  indent=2, sort_keys=True)
        handle.write("\n")
    return 0


def _resolve(base, path):
    p = Path(path)
    return str(p if p.is_absolute() else base / p)


def cmd_eval(args, config):
    """Score every manifest pair; relative paths count from the manifest.

    Pairs without a prediction column are matched on the spot under the
    resolved config.
    """
    entries = parse_manifest(args.manifest)
    base = Path(args.manifest).resolve().parent
    entries = [(_resolve(base, src), _resolve(base, tgt),
                _resolve(base, gt),
                None if pred is None else _resolve(base, pred))
               for src, tgt, gt, pred in entries]

    def matcher(src, tgt):
        pair = "%s:%s" % (Path(src).stem, Path(tgt).stem)
        job = run_match_job(io.load_mesh(src), io.load_mesh(tgt), config,
                            pair=pair)
        return job.pointmap

    rows = evaluate_manifest(entries, matcher=matcher)
    write_eval_csv(args.out_csv, rows)
    return 0


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("pipeline configuration")
    group.add_argument("--config", metavar="PATH",
                       help="JSON config file (flags override it)")
    group.add_argument("--seed", type=int, metavar="K",
                       help="base rng seed (default 0)")
    group.add_argument("--threads", type=int, metavar="N",
                       help="worker count accepted for config "
                            "compatibility; orchestration is sequential")
    group.add_argument("--s", type=int, metavar="N", dest="s",
                       help="target coarse vertex count (default 3000)")
    group.add_argument("--k0", type=int, metavar="K",
                       help="initial functional map size (default 20)")
    group.add_argument("--step", type=int, metavar="K",
                       help="upsampling step (default 5)")
    group.add_argument("--k-final", type=int, metavar="K", dest="k_final",
                       help="final functional map size (default 100)")
    group.add_argument("--descriptor", choices=DESCRIPTOR_KINDS,
                       help="descriptor kind (default wks)")
    group.add_argument("--descriptor-count", type=int, metavar="D",
                       dest="descriptor_count",
                       help="descriptor sample count (default 100)")
    group.add_argument("--component-area-threshold", type=float, metavar="F",
                       dest="component_area_threshold",
                       help="drop coarse components below this area "
                            "fraction (default 0.01)")
    group.add_argument("--resample", action=argparse.BooleanOptionalAction,
                       default=None,
                       help="split oversized triangles before sampling")
    group.add_argument("--dump-config", action="store_true",
                       help="print the resolved config and exit")

    parser = argparse.ArgumentParser(
        prog="meshmatch",
        description="coarse remeshing and spectral correspondence")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("remesh", parents=[common],
                       help="coarsen one mesh to about s vertices")
    p.add_argument("input", help="input mesh (.off/.obj/.ply)")
    p.add_argument("out", help="output mesh path; cell and generator "
                               "sidecars land next to it")
    p.set_defaults(func=cmd_remesh)

    p = sub.add_parser("match", parents=[common],
                       help="map a source mesh onto a target mesh")
    p.add_argument("source", help="source mesh")
    p.add_argument("target", help="target mesh")
    p.add_argument("out_dir", help="artifact directory")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("transfer", parents=[common],
                       help="carry a per vertex function through a match")
    p.add_argument("artifacts", help="match output directory")
    p.add_argument("function", help="text file, one row per source vertex")
    p.add_argument("out", help="output text file, one row per target vertex")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("perturb", parents=[common],
                       help="synthesize perturbed benchmark pairs from a "
                            "directory of same-connectivity meshes")
    p.add_argument("in_dir", help="directory of input meshes")
    p.add_argument("out_dir", help="directory for perturbed meshes, ground "
                                   "truths, manifest and seed log")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("eval", parents=[common],
                       help="score a manifest of pairs into a CSV")
    p.add_argument("manifest", help="lines of: source target gt [pred]")
    p.add_argument("out_csv", help="output CSV (pair, age, auc)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        file_values = load_config_file(args.config) if args.config else None
        flag_values = {key: getattr(args, key) for key in _CONFIG_KEYS}
        config = resolve_config(file_values, flag_values)
        logger.info("resolved config: %s",
                    json.dumps(vars(config), sort_keys=True))
        if args.dump_config:
            sys.stdout.write(dump_config(config))
            return 0
        return args.func(args, config)
    except MeshIOError as exc:
        return _fail(3, "io", exc)
    except TopologyError as exc:
        return _fail(4, "topology", exc)
    except (ConvergenceError, EigensolverError) as exc:
        return _fail(5, "numerical", exc)
    except OSError as exc:
        return _fail(3, "io", exc)
    except ValueError as exc:
        return _fail(2, "config", exc)


def _fail(code, category, exc):
    sys.stderr.write("meshmatch: %s error: %s\n" % (category, exc))
    return code


if __name__ == "__main__":
    sys.exit(main())
