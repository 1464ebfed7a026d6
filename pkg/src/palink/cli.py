"""Command line entry points: ``palink run`` and ``palink reproduce``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (ARCH_NAMES, COMP_MODES, METRICS, PA_MODES,
                      ExperimentPlan, reproduce_reference_suite, run)
from .scenario import desk_preset, load_scenario, table1_preset


def _load(args, archs) -> tuple[object, dict | None]:
    seed = args.seed if args.seed is not None else 1
    if args.preset:
        fn = {"table1": table1_preset, "desk": desk_preset}.get(args.preset)
        if fn is None:
            raise SystemExit(f"unknown preset {args.preset!r}")
        by_arch = {arch: fn(arch, seed=seed) for arch in archs}
        return by_arch[archs[0]], by_arch
    if args.scenario:
        sc = load_scenario(args.scenario)
        if args.seed is not None:
            from dataclasses import replace
            sc = replace(sc, seed=args.seed)
        return sc, None
    raise SystemExit("one of --scenario or --preset is required")


def _csv_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="palink",
        description="massive-MIMO downlink simulator with nonlinear PAs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment plan")
    p_run.add_argument("--scenario", type=Path, help="scenario JSON file")
    p_run.add_argument("--preset", choices=["table1", "desk"],
                       help="built-in scenario")
    p_run.add_argument("--arch", default="fully_connected",
                       help=f"comma list from {sorted(ARCH_NAMES)}")
    p_run.add_argument("--comp", "--compensation", default="none",
                       help=f"comma list from {COMP_MODES}")
    p_run.add_argument("--pa", default="nonlinear",
                       help=f"comma list from {PA_MODES}")
    p_run.add_argument("--metrics", default="ber",
                       help=f"comma list from {METRICS}")
    p_run.add_argument("--pa-model", type=Path, default=None,
                       help="PA coefficient file (default: shipped model)")
    p_run.add_argument("--out", type=Path, default=Path("out"))
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--bussgang-frames", type=int, default=40)
    p_run.add_argument("--dump-beamformer", action="store_true")
    p_run.add_argument("--dump-dpd", action="store_true")
    p_run.add_argument("--ccm-cache", type=Path, default=None)

    p_rep = sub.add_parser("reproduce",
                           help="reproduce the reference figure suite")
    p_rep.add_argument("--scale", choices=["desk", "full"], default="desk")
    p_rep.add_argument("--out", type=Path, default=Path("out"))
    p_rep.add_argument("--seed", type=int, default=1)
    p_rep.add_argument("--jobs", type=int, default=1)

    args = parser.parse_args(argv)

    if args.command == "reproduce":
        manifest = reproduce_reference_suite(scale=args.scale, out_dir=args.out,
                                         seed=args.seed, jobs=args.jobs)
        failed = [leg for leg in manifest.legs if leg["status"] != "ok"]
        for leg in failed:
            print(f"[error] {leg['leg']}: {leg['error']}", file=sys.stderr)
        print(f"{len(manifest.legs) - len(failed)}/{len(manifest.legs)} "
              f"legs ok, outputs in {args.out}")
        if not failed:
            return 0
        return 1 if len(failed) < len(manifest.legs) else 2

    try:
        archs = tuple(ARCH_NAMES[a] for a in _csv_list(args.arch))
    except KeyError as exc:
        raise SystemExit(f"unknown architecture {exc}")
    sc, by_arch = _load(args, archs)
    if args.pa_model is not None:
        from dataclasses import replace
        sc = replace(sc, pa_model=str(args.pa_model))
        if by_arch is not None:
            by_arch = {a: replace(s, pa_model=str(args.pa_model))
                       for a, s in by_arch.items()}
    comps = tuple(_csv_list(args.comp))
    pas = tuple(_csv_list(args.pa))
    metrics = tuple(_csv_list(args.metrics))
    for c in comps:
        if c not in COMP_MODES:
            raise SystemExit(f"unknown compensation {c!r}")
    for p in pas:
        if p not in PA_MODES:
            raise SystemExit(f"unknown pa mode {p!r}")
    for m in metrics:
        if m not in METRICS:
            raise SystemExit(f"unknown metric {m!r}")

    plan = ExperimentPlan(
        scenario=sc,
        architectures=archs,
        compensations=comps,
        pa_modes=pas,
        metrics=metrics,
        out_dir=args.out,
        jobs=args.jobs,
        n_frames_bussgang=args.bussgang_frames,
        dump_beamformer=args.dump_beamformer,
        dump_dpd=args.dump_dpd,
        ccm_cache=args.ccm_cache,
        scenario_by_arch=by_arch,
    )
    manifest = run(plan)
    failed = [leg for leg in manifest.legs if leg["status"] != "ok"]
    for leg in failed:
        print(f"[error] {leg['leg']}: {leg['error']}", file=sys.stderr)
    print(f"{len(manifest.legs) - len(failed)}/{len(manifest.legs)} legs ok, "
          f"outputs in {args.out}")
    if not failed:
        return 0
    return 1 if len(failed) < len(manifest.legs) else 2


if __name__ == "__main__":
    sys.exit(main())
