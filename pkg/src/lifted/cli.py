"""Command-line front end: ``lifted synth|fit|eval|render|interpolate|lux|rerun``.

Every command writes a ``manifest.json`` next to its outputs recording the argv,
resolved configuration, input hashes and output paths, so ``lifted rerun`` can
reproduce it. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .correspond import read_uvmap
from .correspond import extract_observations
from .evalkit import (DEFAULT_YAW_BINS, LandmarkSpec, bin_by_yaw, default_landmark_spec,
                      instance_errors, load_gt_landmarks, report_csv)
from .geometry import quat_from_axis_angle, quat_multiply, quat_slerp, triangulate
from .imageio import read_pfm, write_pfm, write_ppm
from .lux import LuxConfig, decompose, relight
from .model import (CameraPose, Dataset, InstanceRecord, ShapeModel, UvGrid, instance_shape,
                    load_dataset, load_instances, load_model, save_dataset, save_model)
from .objective import LossWeights
from .render import export_obj, render_normal_map_uv, shaded_render
from .solver import FitAborted, SolverConfig, fit, initialize
from .synth import SynthConfig, generate, write as write_synth

log = logging.getLogger("lifted")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _hash_inputs(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        if p is None:
            continue
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                full = os.path.join(p, name)
                if os.path.isfile(full):
                    out[full] = _sha256(full)
        else:
            out[p] = _sha256(p)
    return out


def _write_manifest(out_dir, args, argv, config, inputs, outputs, started, extra=None) -> str:
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config,
        "inputs": _hash_inputs(inputs),
        "outputs": outputs,
        "wall_clock_s": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, default=_json_default)
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _floats(text: str, count: int | None = None) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and vals.size != count:
        raise argparse.ArgumentTypeError(f"expected {count} numbers, got {vals.size}")
    return vals


def _light(text: str) -> np.ndarray:
    if os.path.isfile(text):
        with open(text) as fh:
            obj = json.load(fh)
        vals = np.asarray(obj["L"] if isinstance(obj, dict) else obj, dtype=float)
        if vals.shape != (9,):
            raise argparse.ArgumentTypeError(f"{text}: expected 9 SH coefficients")
        return vals
    return _floats(text, 9)


def _range(text: str) -> tuple[float, float]:
    lo, hi = _floats(text, 2)
    return float(lo), float(hi)


def _lr_scale(text: str) -> tuple[str, float]:
    name, _, val = text.partition("=")
    try:
        return name, float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected BLOCK=FACTOR, got {text!r}") from None


def _threads(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("LIFTED_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"LIFTED_THREADS must be an integer, got {env!r}") from None
    return None


def _load_fitted(args) -> Dataset:
    model = load_model(args.model)
    return load_dataset(args.dataset, model)


def _instance(dataset: Dataset, iid: str) -> InstanceRecord:
    try:
        inst = dataset.by_id(iid)
    except KeyError:
        raise ValueError(f"unknown instance id {iid!r}") from None
    if not inst.is_initialized():
        raise ValueError(f"instance {iid!r} has no fitted codes/camera")
    return inst


# ------------------------------------------------------------------ commands

def cmd_synth(args, argv) -> int:
    started = time.time()
    cfg = SynthConfig(n=args.n, I=args.I, E=args.E, K=args.K, yaw_range=args.yaw,
                      pitch_range=args.pitch, roll_range=args.roll, sigma_range=args.sigma,
                      image_size=args.image_size, noise_std=args.noise_std,
                      occlusion_rate=args.occlusion_rate, identity_groups=args.identity_groups,
                      expression_groups=args.expression_groups, pose_groups=args.pose_groups,
                      basis_scale=args.basis_scale, lux_size=args.lux_size,
                      checker_cell=args.checker_cell, uvmaps=args.uvmaps, seed=args.seed)
    paths = write_synth(generate(cfg), args.out)
    _write_manifest(args.out, args, argv, asdict(cfg), [], paths, started)
    print(f"wrote {len(paths)} artifacts to {args.out}")
    return 0


def _fit_input(args) -> Dataset:
    if args.model_init:
        grid_model = load_model(args.model_init)
        grid = grid_model.grid
    else:
        grid = UvGrid(args.n)
    N = grid.num_vertices
    placeholder = ShapeModel(grid, np.zeros((N, 3)), np.zeros((args.I, N, 3)), np.zeros((args.E, N, 3)))
    if args.uvmaps:
        insts = []
        for name in sorted(os.listdir(args.uvmaps)):
            if not name.endswith(".pfm"):
                continue
            obs, _ = extract_observations(read_uvmap(os.path.join(args.uvmaps, name)), grid, args.tau)
            insts.append(InstanceRecord(name[:-4], obs))
        if args.observations:
            # labels come from the observation file when both are given
            labels = {i.id: i.labels for i in load_instances(args.observations)}
            for inst in insts:
                inst.labels = labels.get(inst.id)
    else:
        insts = [InstanceRecord(i.id, i.observations, labels=i.labels)
                 for i in load_instances(args.observations)]
    if not insts:
        raise ValueError("no instances to fit")
    return Dataset(placeholder, insts)


def cmd_fit(args, argv) -> int:
    started = time.time()
    if not args.observations and not args.uvmaps:
        raise UsageError("fit needs --observations and/or --uvmaps")
    weights = LossWeights(args.lambda_3d, args.lambda_disentangle, args.lambda_scale,
                          args.lambda_shape, args.margin)
    cfg = SolverConfig(lr=args.lr, decay_factor=args.decay_factor,
                       decay_every_epochs=args.decay_every, epochs=args.epochs,
                       batch_size=args.batch_size, seed=args.seed, weights=weights,
                       lr_scale=dict(args.lr_scale or []), align_every=args.align_every)
    os.makedirs(args.out, exist_ok=True)
    limit = _threads(args)
    with threadpool_limits(limits=limit):
        data = _fit_input(args)
        ds = initialize(data, cfg)
        fitted, history = fit(ds, cfg)
    outputs = {"model": os.path.join(args.out, "model.json"),
               "dataset": os.path.join(args.out, "dataset.jsonl"),
               "losses": os.path.join(args.out, "losses.csv")}
    save_model(outputs["model"], fitted.model)
    save_dataset(outputs["dataset"], fitted)
    history.write_csv(outputs["losses"])
    config = {"solver": asdict(cfg), "n": fitted.model.grid.n, "I": args.I, "E": args.E,
              "tau": args.tau, "threads": limit}
    losses = {}
    for epoch, name, value in history.rows:
        losses.setdefault(name, []).append(value)
    _write_manifest(args.out, args, argv, config, [args.observations, args.uvmaps, args.model_init],
                    outputs, started, {"losses": losses})
    print(f"epochs={cfg.epochs} final total={history.final('total'):.6g} "
          f"l3d={history.final('l3d'):.6g} mean reprojection error={history.final('reproj_mean'):.6g}")
    return 0


def _parse_bins(text: str):
    edges = _floats(text)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise argparse.ArgumentTypeError("yaw bins need at least two increasing edges")
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def cmd_eval(args, argv) -> int:
    started = time.time()
    fitted = _load_fitted(args)
    gt = load_gt_landmarks(args.gt)
    if args.landmarks:
        with open(args.landmarks) as fh:
            spec = LandmarkSpec.from_dict(json.load(fh))
    else:
        spec = default_landmark_spec(fitted.model.grid)
    if args.space == "2d" and (spec.left_eye is None or spec.right_eye is None):
        raise UsageError("2D NME needs eye landmarks in the landmark spec")
    ids, errs, yaws = instance_errors(fitted.model, fitted.instances, gt, spec, args.space,
                                      not args.no_rotation)
    rows = bin_by_yaw(errs, yaws, args.yaw_bins)
    text = report_csv(rows)
    os.makedirs(args.out, exist_ok=True)
    outputs = {"report": os.path.join(args.out, "report.csv"),
               "per_instance": os.path.join(args.out, "per_instance.csv")}
    with open(outputs["report"], "w") as fh:
        fh.write(text)
    with open(outputs["per_instance"], "w") as fh:
        fh.write("id,yaw,nme\n")
        for iid, y, e in zip(ids, yaws, errs):
            fh.write(f"{iid},{float(y)!r},{float(e)!r}\n")
    config = {"space": args.space, "rotation": not args.no_rotation, "yaw_bins": args.yaw_bins}
    _write_manifest(args.out, args, argv, config, [args.model, args.dataset, args.gt, args.landmarks],
                    outputs, started)
    sys.stdout.write(text)
    return 0


def _yawed(camera: CameraPose, degrees: float) -> CameraPose:
    q = quat_multiply(camera.q, quat_from_axis_angle([0, 1, 0], np.radians(degrees)))
    return CameraPose(q, camera.t.copy(), camera.sigma)


def _light_dir(text: str) -> np.ndarray:
    return _floats(text, 3)


def cmd_render(args, argv) -> int:
    started = time.time()
    ds = _load_fitted(args)
    inst = _instance(ds, args.id)
    S = instance_shape(ds.model, inst.code_identity, inst.code_expression)
    tris = triangulate(ds.model.grid)
    os.makedirs(args.out, exist_ok=True)
    outputs = {"obj": os.path.join(args.out, f"{args.id}.obj")}
    export_obj(outputs["obj"], S, tris, ds.model.grid.uv)
    areas = {}
    for yaw in args.yaw_offsets:
        cam = _yawed(inst.camera, yaw)
        if args.center:
            cam = _centered(S, cam, args.size)
        rgb, raster = shaded_render(S, tris, cam, args.size, args.size, args.light)
        name = f"{args.id}_yaw{yaw:+g}.ppm"
        write_ppm(os.path.join(args.out, name), rgb)
        outputs[f"yaw{yaw:+g}"] = os.path.join(args.out, name)
        areas[f"{yaw:+g}"] = int(raster.mask.sum())
    _write_manifest(args.out, args, argv, {"yaw_offsets": args.yaw_offsets, "size": args.size},
                    [args.model, args.dataset], outputs, started, {"foreground_pixels": areas})
    print(f"rendered {len(args.yaw_offsets)} views of {args.id}")
    return 0


def _centered(S, cam: CameraPose, size: int) -> CameraPose:
    """Camera translated so the projected shape's centroid sits at the image center."""
    from .geometry import project
    c = project(S, cam).mean(axis=0)
    return CameraPose(cam.q, cam.t + (size - 1) / 2.0 - c, cam.sigma)


def interpolate_instances(a: InstanceRecord, b: InstanceRecord, alpha: float,
                          codes: bool = True, camera: bool = True) -> InstanceRecord:
    """Linear blend of codes and slerp/linear blend of cameras between two instances."""
    sI, sE, cam = a.code_identity, a.code_expression, a.camera
    if codes:
        sI = (1 - alpha) * a.code_identity + alpha * b.code_identity
        sE = (1 - alpha) * a.code_expression + alpha * b.code_expression
    if camera:
        cam = CameraPose(quat_slerp(a.camera.q, b.camera.q, alpha),
                         (1 - alpha) * a.camera.t + alpha * b.camera.t,
                         (1 - alpha) * a.camera.sigma + alpha * b.camera.sigma)
    return InstanceRecord(f"{a.id}->{b.id}@{alpha:g}", {}, sI, sE, cam.copy())


def cmd_interpolate(args, argv) -> int:
    started = time.time()
    ds = _load_fitted(args)
    a, b = _instance(ds, args.source), _instance(ds, args.target)
    if args.frames < 2:
        raise UsageError("--frames must be >= 2")
    tris = triangulate(ds.model.grid)
    os.makedirs(args.out, exist_ok=True)
    outputs = {}
    for f in range(args.frames):
        alpha = f / (args.frames - 1)
        mid = interpolate_instances(a, b, alpha, "codes" in args.what, "camera" in args.what)
        S = instance_shape(ds.model, mid.code_identity, mid.code_expression)
        obj = os.path.join(args.out, f"frame{f:03d}.obj")
        export_obj(obj, S, tris, ds.model.grid.uv)
        rgb, _ = shaded_render(S, tris, mid.camera, args.size, args.size)
        ppm = os.path.join(args.out, f"frame{f:03d}.ppm")
        write_ppm(ppm, rgb)
        outputs[f"frame{f:03d}"] = [obj, ppm]
    _write_manifest(args.out, args, argv, {"frames": args.frames, "what": args.what, "size": args.size},
                    [args.model, args.dataset], outputs, started)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def cmd_lux(args, argv) -> int:
    started = time.time()
    ds = _load_fitted(args)
    inst = _instance(ds, args.id)
    T = read_pfm(args.texture)
    h, w = T.shape[:2]
    normals, mask = render_normal_map_uv(ds.model, inst, w, h)
    cfg = LuxConfig(lambda_shade=args.lambda_shade, lambda_albedo=args.lambda_albedo,
                    iterations=args.iterations, lr=args.lr, lr_final=args.lr_final)
    result = decompose(T, normals, mask, cfg)
    st = result.state
    os.makedirs(args.out, exist_ok=True)
    outputs = {"albedo": os.path.join(args.out, "albedo.pfm"),
               "shading": os.path.join(args.out, "shading.pfm"),
               "shading_rendered": os.path.join(args.out, "shading_rendered.pfm"),
               "reconstruction": os.path.join(args.out, "reconstruction.pfm"),
               "light": os.path.join(args.out, "light.json")}
    write_pfm(outputs["albedo"], st.albedo if st.albedo.shape[2] in (1, 3) else st.albedo[:, :, :1])
    write_pfm(outputs["shading"], st.shading)
    write_pfm(outputs["shading_rendered"], st.shading_rendered())
    write_pfm(outputs["reconstruction"], st.reconstruction())
    with open(outputs["light"], "w") as fh:
        json.dump({"L": st.L.tolist(), "L_hat": result.L_hat.tolist(),
                   "reconstruction_mse": result.reconstruction_mse}, fh, indent=1)
    if args.relight is not None:
        outputs["relit"] = os.path.join(args.out, "relit.pfm")
        write_pfm(outputs["relit"], relight(st, args.relight))
    if args.transition_to is not None:
        L0 = st.L if args.transition_from is None else args.transition_from
        for f in range(args.frames):
            alpha = f / max(args.frames - 1, 1)
            Lf = (1 - alpha) * L0 + alpha * args.transition_to
            path = os.path.join(args.out, f"transition{f:03d}.pfm")
            write_pfm(path, relight(st, Lf))
            outputs[f"transition{f:03d}"] = path
    config = {"lux": asdict(cfg), "id": args.id}
    _write_manifest(args.out, args, argv, config, [args.model, args.dataset, args.texture],
                    outputs, started)
    print(f"reconstruction mse={result.reconstruction_mse:.3g} mean albedo="
          f"{float(st.albedo[mask].mean()):.3g}")
    return 0


def cmd_rerun(args, argv) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    old = list(manifest["argv"])
    if args.out:
        if "--out" not in old:
            raise UsageError("manifest command has no --out flag to override")
        old[old.index("--out") + 1] = args.out
    if old and old[0] == "rerun":
        raise UsageError("refusing to rerun a rerun manifest")
    return main(old)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lifted", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic ground-truth problem")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n", type=int, required=True, help="grid subdivisions (vertices per side n+1)")
    s.add_argument("--I", type=int, required=True, help="identity basis size")
    s.add_argument("--E", type=int, required=True, help="expression basis size")
    s.add_argument("--K", type=int, required=True, help="number of instances")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--yaw", type=_range, default=(-45.0, 45.0), help="yaw range in degrees, LO,HI")
    s.add_argument("--pitch", type=_range, default=(-10.0, 10.0), help="pitch range, LO,HI")
    s.add_argument("--roll", type=_range, default=(-5.0, 5.0), help="roll range, LO,HI")
    s.add_argument("--sigma", type=_range, default=(40.0, 60.0), help="camera scale range, LO,HI")
    s.add_argument("--image-size", type=int, default=128)
    s.add_argument("--noise-std", type=float, default=0.0, help="observation noise (image units)")
    s.add_argument("--occlusion-rate", type=float, default=0.1)
    s.add_argument("--identity-groups", type=int, default=10)
    s.add_argument("--expression-groups", type=int, default=6)
    s.add_argument("--pose-groups", type=int, default=0, help="0 gives every instance its own camera")
    s.add_argument("--basis-scale", type=float, default=0.05)
    s.add_argument("--lux-size", type=int, default=0, help="UV size of an SH-lit texture (0: none)")
    s.add_argument("--checker-cell", type=int, default=8)
    s.add_argument("--uvmaps", action="store_true", help="also write dense UV-map PFMs")

    f = sub.add_parser("fit", help="initialize and fit a model to observations")
    f.add_argument("--observations", help="instances JSONL (points and labels)")
    f.add_argument("--uvmaps", help="directory of <id>.pfm UV maps to extract observations from")
    f.add_argument("--tau", type=float, default=None, help="UV match threshold (default 1/(2n))")
    f.add_argument("--model-init", help="model file whose grid defines the mesh (overrides --n)")
    f.add_argument("--out", required=True)
    f.add_argument("--n", type=int, default=64)
    f.add_argument("--I", type=int, default=32, help="identity basis size")
    f.add_argument("--E", type=int, default=32, help="expression basis size")
    f.add_argument("--epochs", type=int, default=400)
    f.add_argument("--lr", type=float, default=1e-4)
    f.add_argument("--decay-factor", type=float, default=0.5)
    f.add_argument("--decay-every", type=int, default=50, help="epochs between decays")
    f.add_argument("--batch-size", type=int, default=64)
    f.add_argument("--lambda-3d", type=float, default=50.0)
    f.add_argument("--lambda-disentangle", type=float, default=1.0)
    f.add_argument("--lambda-scale", type=float, default=0.01)
    f.add_argument("--lambda-shape", type=float, default=0.1)
    f.add_argument("--margin", type=float, default=1.0, help="triplet margin")
    f.add_argument("--lr-scale", type=_lr_scale, action="append", metavar="BLOCK=FACTOR",
                   help="step-size multiplier for one parameter block (repeatable)")
    f.add_argument("--align-every", type=int, default=0, metavar="EPOCHS",
                   help="re-express codes along labeled groups every EPOCHS epochs and at the end (0: off)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--threads", type=int, default=None,
                   help="cap BLAS threads (falls back to LIFTED_THREADS)")

    e = sub.add_parser("eval", help="landmark NME report binned by yaw")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--gt", required=True, help="ground-truth landmark JSONL")
    e.add_argument("--landmarks", help="landmark spec JSON (default: built-in layout)")
    e.add_argument("--space", choices=("2d", "3d"), default="3d")
    e.add_argument("--no-rotation", action="store_true", help="Procrustes without rotation")
    e.add_argument("--yaw-bins", type=_parse_bins, default=list(DEFAULT_YAW_BINS),
                   help="comma-separated bin edges in degrees (default 0,30,60,90)")
    e.add_argument("--out", required=True)

    r = sub.add_parser("render", help="render a fitted instance at yaw offsets and export OBJ")
    r.add_argument("--model", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--id", required=True)
    r.add_argument("--yaw-offsets", type=_floats, default=np.array([0.0]),
                   help="comma-separated yaw offsets in degrees")
    r.add_argument("--size", type=int, default=256)
    r.add_argument("--light", type=_light_dir, default=np.array([0.0, 0.0, 1.0]))
    r.add_argument("--center", action="store_true", help="center the shape in the image")
    r.add_argument("--out", required=True)

    i = sub.add_parser("interpolate", help="blend two instances over a frame sequence")
    i.add_argument("--model", required=True)
    i.add_argument("--dataset", required=True)
    i.add_argument("--from", dest="source", required=True)
    i.add_argument("--to", dest="target", required=True)
    i.add_argument("--frames", type=int, default=8)
    i.add_argument("--what", choices=("codes", "camera", "codes+camera"), default="codes+camera")
    i.add_argument("--size", type=int, default=256)
    i.add_argument("--out", required=True)

    x = sub.add_parser("lux", help="albedo/shading decomposition and relighting of a UV texture")
    x.add_argument("--model", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--id", required=True)
    x.add_argument("--texture", required=True, help="UV texture PFM")
    x.add_argument("--iterations", type=int, default=3000)
    x.add_argument("--lr", type=float, default=1e-2)
    x.add_argument("--lr-final", type=float, default=1e-4)
    x.add_argument("--lambda-shade", type=float, default=1e-4)
    x.add_argument("--lambda-albedo", type=float, default=2e-6)
    x.add_argument("--relight", type=_light, help="9 SH coefficients (or a JSON file) to relight with")
    x.add_argument("--transition-from", type=_light, help="start of an SH transition (default: fitted)")
    x.add_argument("--transition-to", type=_light, help="end of an SH transition")
    x.add_argument("--frames", type=int, default=8)
    x.add_argument("--out", required=True)

    m = sub.add_parser("rerun", help="rerun a command from its manifest")
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", help="write to this directory instead of the original")
    return p


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "eval": cmd_eval, "render": cmd_render,
            "interpolate": cmd_interpolate, "lux": cmd_lux, "rerun": cmd_rerun}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # the manifest stores the command line without global flags
    cmd_argv = argv[argv.index(args.command):]
    try:
        return COMMANDS[args.command](args, cmd_argv)
    except UsageError as exc:
        print(f"lifted {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FitAborted, OSError, ValueError, KeyError, IndexError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lifted {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
