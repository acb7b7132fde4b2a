"""Command-line interface: dataset synthesis, pair registration, mosaicing,
and evaluation, with reproducible JSON/PGM outputs.

Exit codes are a stable scripting contract: 0 success, 2 invalid input or
configuration, 3 I/O failure, 4 algorithmic failure (registration could
not converge).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import synth as synth_mod
from .errors import (
    ConfigError,
    ImageFormatError,
    InsufficientOverlapError,
    MosaicError,
    RegistrationFailureError,
    SingularTransformError,
)
from .motion import ModelKind, MotionParams
from .pairwise import RegisterOptions, register_pair
from .panorama import Registration, compute_bounds, estimate_panorama, ml_cost, render
from .raster import load_image
from .refine import MlmOptions, MlmTrace, SweepRecord, refine, sequential_init
from .synth import ChainSpec, SynthConfig

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mlmosaic",
        description="Featureless image registration and panoramic mosaicing.",
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    p.add_argument("--threads", type=int, default=None, metavar="N", help="cap worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset from a JSON config")
    sp.add_argument("config", help="path to config.json")
    sp.add_argument("--out", required=True, metavar="DIR", help="output dataset directory")
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")

    rp = sub.add_parser("register", help="register a pair of images")
    rp.add_argument("image_a", help="fixed image")
    rp.add_argument("image_b", help="moving image")
    rp.add_argument("--model", choices=("translation", "affine"), default="translation")
    rp.add_argument("--levels", type=int, default=4, help="pyramid levels")
    rp.add_argument("--damping", type=float, default=1e-6)
    rp.add_argument("--min-update", type=float, default=1e-4)
    rp.add_argument("--max-iters", type=int, default=50)
    rp.add_argument("--min-overlap", type=int, default=256)
    rp.add_argument("--fixed-window", type=int, default=None,
                    help="use a centered square window instead of the adaptive one")

    mp = sub.add_parser("mosaic", help="mosaic a directory of frames")
    mp.add_argument("frames_dir")
    mp.add_argument("--mode", choices=("sequential", "mlm"), default="mlm",
                    help="pairwise chaining only, or chaining plus global refinement")
    mp.add_argument("--model", choices=("translation", "affine"), default="translation")
    mp.add_argument("--out", required=True, metavar="DIR")
    mp.add_argument("--levels", type=int, default=4, help="pairwise pyramid levels")
    mp.add_argument("--refine-levels", type=int, default=3, help="refinement pyramid levels")
    mp.add_argument("--max-sweeps", type=int, default=20)
    mp.add_argument("--sweep-tol", type=float, default=1e-5)
    mp.add_argument("--damping", type=float, default=1e-6)
    mp.add_argument("--min-overlap", type=int, default=256)

    ep = sub.add_parser("eval", help="score a registration against ground truth")
    ep.add_argument("registration", help="estimated registration.json")
    ep.add_argument("truth", help="ground-truth truth.json")
    ep.add_argument("frames_dir")
    ep.add_argument("source", help="source image the frames were cut from")
    return p


def _cap_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def _parse_synth_config(path: Path, seed_override: int | None) -> tuple[SynthConfig, str]:
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    try:
        source_ref = raw["source"]
        kind = ModelKind.from_string(raw["kind"])
        n_frames = int(raw["n_frames"])
        frame_size = tuple(int(v) for v in raw["frame_size"])
        sigma = float(raw.get("noise_sigma", 0.0))
        seed = int(raw["seed"]) if seed_override is None else seed_override
        if "trajectory" in raw:
            trajectory = [MotionParams(kind, np.asarray(t, float)) for t in raw["trajectory"]]
        elif "chain" in raw:
            c = raw["chain"]
            trajectory = ChainSpec(
                step=(float(c["step"][0]), float(c["step"][1])),
                jitter=float(c.get("jitter", 0.0)),
                affine_jitter=float(c.get("affine_jitter", 0.0)),
            )
        else:
            raise ConfigError("config needs either 'trajectory' or 'chain'")
    except KeyError as exc:
        raise ConfigError(f"config is missing key {exc}") from exc
    except (TypeError, ValueError, SingularTransformError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    source_path = Path(source_ref)
    if not source_path.is_absolute():
        source_path = path.parent / source_path
    source = load_image(source_path)
    cfg = SynthConfig(
        source=source,
        n_frames=n_frames,
        frame_size=frame_size,  # type: ignore[arg-type]
        kind=kind,
        trajectory=trajectory,
        noise_sigma=sigma,
        seed=seed,
    )
    return cfg, str(source_ref)


def cmd_synth(args) -> int:
    cfg, source_ref = _parse_synth_config(Path(args.config), args.seed)
    ds = synth_mod.generate(cfg)
    synth_mod.save_dataset(ds, args.out, source_ref=source_ref)
    log.info("wrote %d frames to %s", len(ds.frames), args.out)
    return 0


def cmd_register(args) -> int:
    img_a = load_image(args.image_a)
    img_b = load_image(args.image_b)
    kind = ModelKind.from_string(args.model)
    opts = RegisterOptions(
        max_levels=args.levels,
        max_iters_fine=args.max_iters,
        min_update_norm=args.min_update,
        damping=args.damping,
        min_overlap_pixels=args.min_overlap,
        fixed_window=args.fixed_window,
    )
    from . import motion

    res = register_pair(img_a, img_b, motion.identity(kind), opts)
    sys.stdout.write(
        _dump(
            {
                "params": res.params.to_dict(),
                "final_cost": res.final_cost,
                "iterations": res.iterations,
                "overlap_pixels": res.overlap_pixels,
            }
        )
    )
    return 0


def cmd_mosaic(args) -> int:
    frames = synth_mod.load_frames(args.frames_dir)
    kind = ModelKind.from_string(args.model)
    pair_opts = RegisterOptions(
        max_levels=args.levels,
        damping=args.damping,
        min_overlap_pixels=args.min_overlap,
    )
    reg_init = sequential_init(frames, kind, pair_opts)
    grid_init = compute_bounds(frames, reg_init, margin=0)
    cost_init = ml_cost(frames, reg_init, grid_init)

    if args.mode == "mlm":
        mlm_opts = MlmOptions(
            max_sweeps=args.max_sweeps,
            sweep_tol=args.sweep_tol,
            damping=args.damping,
            max_levels=args.refine_levels,
        )
        reg_final, trace = refine(frames, reg_init, mlm_opts)
    else:
        reg_final = reg_init
        trace = MlmTrace(
            records=[
                SweepRecord(
                    level=0, sweep=0, ml_cost=cost_init, max_update_norm=0.0, frames_skipped=0
                )
            ],
            level_schedule=[0],
            terminations=[(0, "sequential")],
        )

    grid = compute_bounds(frames, reg_final, margin=0)
    pano = estimate_panorama(frames, reg_final, grid)
    cost_final = ml_cost(frames, reg_final, grid)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        render(pano, outdir / "panorama.pgm", outdir / "weights.pgm")
        written += [outdir / "panorama.pgm", outdir / "weights.pgm"]
        reg_path = outdir / "registration.json"
        reg_path.write_text(_dump(reg_final.to_dict()))
        written.append(reg_path)
        if args.mode == "mlm":
            init_path = outdir / "registration_init.json"
            init_path.write_text(_dump(reg_init.to_dict()))
            written.append(init_path)
        trace_path = outdir / "trace.jsonl"
        trace_path.write_text(trace.to_jsonl())
        written.append(trace_path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise

    sys.stdout.write(
        _dump(
            {
                "frames": len(frames),
                "mode": args.mode,
                "ml_cost_init": cost_init,
                "ml_cost_final": cost_final,
                "out": str(outdir),
            }
        )
    )
    return 0


def cmd_eval(args) -> int:
    try:
        est = Registration.from_dict(json.loads(Path(args.registration).read_text()))
        truth = Registration.from_dict(json.loads(Path(args.truth).read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad registration JSON: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"registration JSON missing field: {exc}") from exc
    frames = synth_mod.load_frames(args.frames_dir)
    source = load_image(args.source)
    try:
        report = synth_mod.evaluate(est, truth, frames, source)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sys.stdout.write(_dump(report.to_dict()))
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        _cap_threads(args.threads)
    handlers = {
        "synth": cmd_synth,
        "register": cmd_register,
        "mosaic": cmd_mosaic,
        "eval": cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except (RegistrationFailureError, InsufficientOverlapError, SingularTransformError) as exc:
        print(f"registration failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ImageFormatError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except MosaicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
