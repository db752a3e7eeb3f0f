"""``bcflow`` command line interface.

Exit codes: 0 success, 1 validation or usage error, 2 IO / file format error.
Diagnostics go to stderr; key=value results go to stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .core import ShapeError, flow_to_color
from .decompose import decompose_flow
from .io import (FLO_TAG, FormatError, read_flow, read_image, read_mask, write_flo, write_flow, write_image,
                 write_mask)
from .metrics import MetricError, bc_violation_mask, epe, fl_all, occlusion_pr, weighted_epe
from .objective import Fields, GroundTruth, RefinementDiverged, refine_fields, total_loss, weight_profile
from .photometric import bc_divergence
from .synth import SceneError, SceneSpec, generate_scene
from .variational import SolverError, estimate_flow_hs


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="bcflow", description="Brightness-constancy flow decomposition toolkit.")
    parser.add_argument("--version", action="store_true", help="print toolkit and format versions")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("decompose", parents=[common], help="decompose a ground-truth flow")
    p.add_argument("--img1", required=True)
    p.add_argument("--img2", required=True)
    p.add_argument("--flow", required=True, help="ground-truth flow (.flo or KITTI .png)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--radius", type=int, dest="search_radius")
    p.add_argument("--eps", type=float, dest="bc_epsilon")
    p.add_argument("--k", type=float, dest="sigmoid_k")
    p.add_argument("--no-subpixel", action="store_true")

    p = sub.add_parser("estimate", parents=[common], help="Horn-Schunck flow estimate")
    p.add_argument("--img1", required=True)
    p.add_argument("--img2", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", help="uncertainty map down-weighting the data term")
    p.add_argument("--smoothness", type=float, dest="hs_smoothness")
    p.add_argument("--iterations", type=int, dest="hs_iterations")
    p.add_argument("--levels", type=int, dest="hs_pyramid_levels")

    for name, help_ in (("loss", "evaluate the training objective"), ("refine", "gradient-descent refinement")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--img1", required=True)
        p.add_argument("--img2", required=True)
        p.add_argument("--flow", help="ground-truth flow; omit for unlabeled pairs")
        p.add_argument("--gt-dir", help="directory written by 'decompose' (computed if omitted)")
        p.add_argument("--unlabeled", action="store_true", help="photometric-only profile, alpha frozen")
        if name == "loss":
            p.add_argument("--pred-dir", required=True, help="directory with wp.flo, wa.flo, alpha.npy|png")
        else:
            p.add_argument("--init-dir", help="initial fields (default: zero flows, alpha 0.5)")
            p.add_argument("--out-dir", required=True)
            p.add_argument("--steps", type=int, dest="refine_steps")
            p.add_argument("--step-size", type=float, dest="refine_step_size")

    p = sub.add_parser("eval", parents=[common], help="flow metrics")
    p.add_argument("--flow", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--valid", help="validity mask PNG")
    p.add_argument("--wp", help="physical-branch flow for weighted EPE")
    p.add_argument("--wa", help="augmentation-branch flow for weighted EPE")
    p.add_argument("--alpha-star", help="alpha* map weighting the branch EPEs")
    p.add_argument("--alpha", help="predicted uncertainty for occlusion AP")
    p.add_argument("--occ", help="ground-truth occlusion mask PNG")

    p = sub.add_parser("mask", parents=[common], help="brightness-constancy violation mask")
    p.add_argument("--img1", required=True)
    p.add_argument("--img2", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--eps", type=float, dest="mask_eps")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic scene")
    p.add_argument("--spec", required=True, help="scene JSON")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("viz", parents=[common], help="color-code a flow file")
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-radius", type=float)

    p = sub.add_parser("convert", parents=[common], help="convert between .flo and KITTI .png")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for key in ("seed", "threads", "search_radius", "bc_epsilon", "sigmoid_k", "hs_smoothness", "hs_iterations",
                "hs_pyramid_levels", "refine_steps", "refine_step_size", "mask_eps"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_subpixel", False):
        overrides["subpixel_refine"] = False
    cfg.update(overrides)
    cfg.validate()
    return cfg


def read_scalar_map(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".npy":
        try:
            arr = np.load(path, allow_pickle=False)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
        return np.asarray(arr, dtype=np.float64)
    return read_image(path).mean(axis=2)


def _read_fields(directory) -> Fields:
    d = Path(directory)
    if (d / "decomposition.npz").exists():
        z = np.load(d / "decomposition.npz", allow_pickle=False)
        return Fields(z["w_p"], z["w_a"], z["alpha"])
    alpha_path = d / "alpha.npy" if (d / "alpha.npy").exists() else d / "alpha.png"
    return Fields(read_flow(d / "wp.flo")[0], read_flow(d / "wa.flo")[0], read_scalar_map(alpha_path))


def _write_fields(d: Path, w_p, w_a, alpha, extra=None) -> None:
    d.mkdir(parents=True, exist_ok=True)
    write_flo(d / "wp.flo", w_p)
    write_flo(d / "wa.flo", w_a)
    write_image(d / "alpha.png", alpha)
    np.save(d / "alpha.npy", alpha)
    np.savez(d / "decomposition.npz", w_p=w_p, w_a=w_a, alpha=alpha, **(extra or {}))
    write_image(d / "wp_color.png", flow_to_color(w_p))
    write_image(d / "wa_color.png", flow_to_color(w_a))


def _emit(values: dict) -> None:
    for key, value in values.items():
        print(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")


def cmd_decompose(args, cfg):
    i1, i2 = read_image(args.img1), read_image(args.img2)
    w_star, _ = read_flow(args.flow)
    dec = decompose_flow(i1, i2, w_star, cfg.decomposition(), threads=cfg.threads)
    out = Path(args.out_dir)
    _write_fields(out, dec.w_p_star, dec.w_a_star, dec.alpha_star,
                  {"feasible": dec.feasible, "w_star": w_star})
    write_mask(out / "feasible.png", dec.feasible)
    write_image(out / "flow_color.png", flow_to_color(w_star))
    err = np.abs(dec.reconstruct() - w_star).max(axis=2)
    _emit({
        "pixels": dec.feasible.size,
        "feasible_fraction": float(dec.feasible.mean()),
        "max_reconstruction_error": float(err[dec.feasible].max()) if dec.feasible.any() else 0.0,
        "mean_alpha": float(dec.alpha_star.mean()),
    })


def cmd_estimate(args, cfg):
    i1, i2 = read_image(args.img1), read_image(args.img2)
    conf = read_scalar_map(args.alpha) if args.alpha else None
    flow = estimate_flow_hs(i1, i2, cfg.hs_config(conf))
    write_flow(args.out, flow)
    _emit({"mean_u": float(flow[..., 0].mean()), "mean_v": float(flow[..., 1].mean())})


def _ground_truth(args, cfg, i1, i2):
    if args.flow is None:
        return None
    w_star, _ = read_flow(args.flow)
    if args.gt_dir:
        f = _read_fields(args.gt_dir)
        return GroundTruth(w_star, f.w_p, f.w_a, f.alpha)
    dec = decompose_flow(i1, i2, w_star, cfg.decomposition(), threads=cfg.threads)
    return GroundTruth.from_decomposition(dec, w_star)


def cmd_loss(args, cfg):
    i1, i2 = read_image(args.img1), read_image(args.img2)
    weights = weight_profile(not args.unlabeled, cfg.loss_weights())
    gt = None if args.unlabeled else _ground_truth(args, cfg, i1, i2)
    if gt is None and not args.unlabeled:
        raise ValueError("labeled loss needs --flow (or pass --unlabeled)")
    bd = total_loss(_read_fields(args.pred_dir), gt, i1, i2, weights)
    print(bd.to_text())


def cmd_refine(args, cfg):
    i1, i2 = read_image(args.img1), read_image(args.img2)
    weights = weight_profile(not args.unlabeled, cfg.loss_weights())
    gt = None if args.unlabeled else _ground_truth(args, cfg, i1, i2)
    if gt is None and not args.unlabeled:
        raise ValueError("labeled refinement needs --flow (or pass --unlabeled)")
    h, w = i1.shape[:2]
    if args.init_dir:
        init = _read_fields(args.init_dir)
    else:
        init = Fields(np.zeros((h, w, 2)), np.zeros((h, w, 2)), np.full((h, w), 0.5))
    out = Path(args.out_dir)
    try:
        fields, trace = refine_fields(i1, i2, init, gt, weights, cfg.refine_steps, cfg.refine_step_size)
        failure = None
    except RefinementDiverged as exc:
        fields, trace, failure = None, exc.trace, exc
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "p", "a", "total_flow", "photo", "w", "alpha"])
        for step, bd in enumerate(trace):
            t = bd.terms
            writer.writerow([step, repr(bd.total), *(repr(t[k]) for k in ("p", "a", "total", "photo", "w", "alpha"))])
    if failure is not None:
        raise ValueError(str(failure))
    _write_fields(out, fields.w_p, fields.w_a, fields.alpha)
    _emit({"steps": len(trace) - 1, "initial_total": trace[0].total, "final_total": trace[-1].total})


def cmd_eval(args, cfg):
    flow, valid_flow = read_flow(args.flow)
    gt, valid_gt = read_flow(args.gt)
    valid = valid_flow & valid_gt
    if args.valid:
        valid &= read_mask(args.valid)
    mean_epe, _ = epe(flow, gt, valid)
    report = {"epe": mean_epe, "fl_all": fl_all(flow, gt, valid)}
    if args.alpha_star and (args.wp or args.wa):
        alpha_star = read_scalar_map(args.alpha_star)
        if args.wp:
            report["weighted_epe_p"] = weighted_epe(read_flow(args.wp)[0], gt, 1.0 - alpha_star)[1]
        if args.wa:
            report["weighted_epe_a"] = weighted_epe(read_flow(args.wa)[0], gt, alpha_star)[1]
    elif args.wp or args.wa:
        raise ValueError("--wp/--wa need --alpha-star")
    if args.alpha or args.occ:
        if not (args.alpha and args.occ):
            raise ValueError("--alpha and --occ go together")
        report["ap"] = occlusion_pr(read_scalar_map(args.alpha), read_mask(args.occ)).average_precision
    _emit(report)


def cmd_mask(args, cfg):
    i1, i2 = read_image(args.img1), read_image(args.img2)
    flow, _ = read_flow(args.flow)
    mask = bc_violation_mask(bc_divergence(i1, i2, flow), cfg.mask_eps)
    write_mask(args.out, mask)
    _emit({"violation_fraction": float(mask.mean())})


def cmd_synth(args, cfg):
    try:
        raw = json.loads(Path(args.spec).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.spec}: invalid JSON ({exc})") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    scene = generate_scene(SceneSpec.from_dict(raw))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / "img1.png", scene.i1)
    write_image(out / "img2.png", scene.i2)
    write_flo(out / "flow.flo", scene.flow)
    write_mask(out / "occlusion.png", scene.occlusion)
    write_image(out / "flow_color.png", flow_to_color(scene.flow))
    _emit({"occluded_fraction": float(scene.occlusion.mean())})


def cmd_viz(args, cfg):
    flow, valid = read_flow(args.flow)
    flow = np.where(valid[..., None], flow, np.nan)
    write_image(args.out, flow_to_color(flow, args.max_radius))


def cmd_convert(args, cfg):
    flow, valid = read_flow(args.src)
    write_flow(args.out, flow, valid)


COMMANDS = {
    "decompose": cmd_decompose,
    "estimate": cmd_estimate,
    "refine": cmd_refine,
    "loss": cmd_loss,
    "eval": cmd_eval,
    "mask": cmd_mask,
    "synth": cmd_synth,
    "viz": cmd_viz,
    "convert": cmd_convert,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            print(f"bcflow {__version__} (flo tag {FLO_TAG}, kitti png 16-bit, config key=value v1)")
            return 0
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"bcflow: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ShapeError, SceneError, MetricError, SolverError, IndexError) as exc:
        print(f"bcflow: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
