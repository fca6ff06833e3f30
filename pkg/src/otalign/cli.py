"""Command-line entry point.

Subcommands: gen-synthetic, build-subspace, classify, simulate-attack,
verify, benchmark, pca-export, bench-kernels. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure. Failures print a
machine-readable JSON object to stderr and remove partial outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels, bundle_io, ot, properties
from .attack import AttackConfig, StructuredNoiseSpec, attack_bundle
from .classifier import METHODS, ClassifierConfig, OTParams, evaluate
from .distributions import ENTROPY_SIGNS, WeightingConfig, bank_from_bundle
from .errors import DataError, NumericalError
from .subspace import build_projector, load_projector, pca_coords, save_projector

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_weighting_flags(p):
    p.add_argument("--temperature-logit", type=float, default=100.0)
    p.add_argument("--entropy-sign", choices=ENTROPY_SIGNS, default="semantic")
    p.add_argument("--temperature-weight", type=float, default=1.0)


def _add_ot_flags(p):
    p.add_argument("--ot-epsilon", type=float, default=ot.DEFAULT_EPSILON)
    p.add_argument("--ot-max-iters", type=int, default=ot.DEFAULT_MAX_ITERS)
    p.add_argument("--ot-tolerance", type=float, default=ot.DEFAULT_TOLERANCE)


def _add_attack_flags(p):
    p.add_argument("--budget", type=float, default=0.08)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--attack-norm", choices=("l_inf", "l2"), default="l_inf")
    p.add_argument("--parallel-scale", type=float, default=0.0)
    p.add_argument("--orthogonal-scale", type=float, default=0.3)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a deterministic synthetic bundle")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--descriptions", type=int, default=50)
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--subspace-dim", type=int, default=16)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-subspace", help="fit and persist the text subspace")
    p.add_argument("--bundle", required=True)
    p.add_argument("--components", type=int, default=256)
    p.add_argument("--center", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("classify", help="evaluate one method on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--projector")
    _add_weighting_flags(p)
    _add_ot_flags(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")

    p = sub.add_parser("simulate-attack", help="write an attacked copy of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mode", choices=("pgd", "structured"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--projector")
    _add_attack_flags(p)
    p.add_argument("--temperature-logit", type=float, default=100.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run a property suite and report pass/fail")
    p.add_argument(
        "--suite", choices=sorted(properties.SUITES), action="append", required=True
    )
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--epsilon-scale", type=float, default=None)
    p.add_argument("--out")

    p = sub.add_parser("benchmark", help="clean vs attacked accuracy for all methods")
    p.add_argument("--bundle", required=True)
    p.add_argument("--components", type=int, default=256)
    p.add_argument("--center", action="store_true")
    p.add_argument("--attack", choices=("pgd", "structured", "none"), default="pgd")
    p.add_argument("--seed", type=int, default=0)
    _add_attack_flags(p)
    _add_weighting_flags(p)
    _add_ot_flags(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")

    p = sub.add_parser("pca-export", help="2-D subspace coordinates as CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--projector", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench-kernels", help="time numba vs numpy kernel backends")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out")
    return parser


def _dump_json(payload, path=None) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, "utf-8")
    return text


def _resolved(args, skip=("command",)):
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _cmd_gen_synthetic(args) -> int:
    bundle = bundle_io.generate_synthetic(
        seed=args.seed,
        d=args.dim,
        num_classes=args.num_classes,
        descriptions_per_class=args.descriptions,
        views_per_sample=args.views,
        num_samples=args.samples,
        noise_scale=args.noise_scale,
        subspace_dim=args.subspace_dim,
    )
    bundle_io.write_bundle(bundle, args.out)
    print(f"wrote bundle ({args.samples} samples) to {args.out}")
    return EXIT_OK


def _cmd_build_subspace(args) -> int:
    bundle = bundle_io.load_bundle(args.bundle)
    projector = build_projector(bundle.text_features, args.components, center=args.center)
    save_projector(projector, args.out)
    print(
        f"wrote projector (d={projector.dim}, C={projector.components}, "
        f"top singular value {projector.singular_values[0]:.4f}) to {args.out}"
    )
    return EXIT_OK


def _weighting_from(args) -> WeightingConfig:
    return WeightingConfig(
        temperature_logit=args.temperature_logit,
        entropy_sign=args.entropy_sign,
        temperature_weight=args.temperature_weight,
    )


def _ot_params_from(args) -> OTParams:
    return OTParams(args.ot_epsilon, args.ot_max_iters, args.ot_tolerance)


def _method_row(report):
    return {
        "method": report.method,
        "accuracy": report.accuracy,
        "mean_margin": report.mean_margin,
        "mean_score": report.mean_score,
        "samples": report.samples,
        "seconds": report.seconds,
    }


def _cmd_classify(args) -> int:
    bundle = bundle_io.load_bundle(args.bundle)
    projector = load_projector(args.projector) if args.projector else None
    cfg = ClassifierConfig(
        method=args.method,
        components=projector.components if projector else 1,
        weighting=_weighting_from(args),
        ot_params=_ot_params_from(args),
    )
    report = evaluate(bundle, cfg, projector, threads=args.threads)
    payload = {"config": _resolved(args), "result": _method_row(report)}
    text = _dump_json(payload, args.out_json)
    if args.out_csv:
        _write_csv(
            args.out_csv,
            ["method", "accuracy", "mean_margin", "samples", "seconds"],
            [[report.method, report.accuracy, report.mean_margin, report.samples, report.seconds]],
        )
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_simulate_attack(args) -> int:
    bundle = bundle_io.load_bundle(args.bundle)
    cfg = AttackConfig(
        budget=args.budget,
        steps=args.steps,
        step_size=args.step_size,
        norm=args.attack_norm,
        mode="pgd_cosine" if args.mode == "pgd" else "structured",
    )
    bank = bank_from_bundle(bundle) if args.mode == "pgd" else None
    projector = load_projector(args.projector) if args.projector else None
    spec = None
    if args.mode == "structured":
        if projector is None:
            raise _UsageError("--mode structured requires --projector")
        spec = StructuredNoiseSpec(args.parallel_scale, args.orthogonal_scale)
    attacked = attack_bundle(
        bundle,
        cfg,
        bank=bank,
        projector=projector,
        spec=spec,
        seed=args.seed,
        temperature_logit=args.temperature_logit,
    )
    bundle_io.write_bundle(attacked, args.out)
    print(f"wrote attacked bundle to {args.out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    extra = {}
    if args.dim is not None:
        extra["d"] = args.dim
    if args.components is not None:
        extra["components"] = args.components
    reports = []
    for suite in args.suite:
        kwargs = dict(extra)
        if suite == "distortion" and args.epsilon_scale is not None:
            kwargs["epsilon_scale"] = args.epsilon_scale
        if suite in ("ot-oracle", "weights"):
            kwargs = {}
        reports.append(properties.run_suite(suite, args.trials, args.seed, **kwargs))
    passed = all(r["passed"] for r in reports)
    payload = {"config": _resolved(args), "pass": passed, "suites": reports}
    text = _dump_json(payload, args.out)
    sys.stdout.write(text)
    return EXIT_OK if passed else EXIT_NUMERICAL


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_benchmark(args) -> int:
    bundle = bundle_io.load_bundle(args.bundle)
    projector = build_projector(bundle.text_features, args.components, center=args.center)
    weighting = _weighting_from(args)
    ot_params = _ot_params_from(args)
    if args.attack == "none":
        attacked = bundle
    else:
        cfg = AttackConfig(
            budget=args.budget,
            steps=args.steps,
            step_size=args.step_size,
            norm=args.attack_norm,
            mode="pgd_cosine" if args.attack == "pgd" else "structured",
        )
        attacked = attack_bundle(
            bundle,
            cfg,
            bank=bank_from_bundle(bundle, weighting) if args.attack == "pgd" else None,
            projector=projector,
            spec=StructuredNoiseSpec(args.parallel_scale, args.orthogonal_scale)
            if args.attack == "structured"
            else None,
            seed=args.seed,
            temperature_logit=args.temperature_logit,
        )
    rows = []
    results = {}
    for method in METHODS:
        cfg = ClassifierConfig(
            method=method,
            components=args.components,
            weighting=weighting,
            ot_params=ot_params,
        )
        clean = evaluate(bundle, cfg, projector, threads=args.threads)
        robust = evaluate(attacked, cfg, projector, threads=args.threads)
        results[method] = {"clean": _method_row(clean), "robust": _method_row(robust)}
        rows.append(
            [
                method,
                clean.accuracy,
                robust.accuracy,
                robust.mean_margin,
                clean.samples,
                clean.seconds + robust.seconds,
            ]
        )
    payload = {"config": _resolved(args), "results": results}
    text = _dump_json(payload, args.out_json)
    if args.out_csv:
        _write_csv(
            args.out_csv,
            ["method", "clean_accuracy", "robust_accuracy", "mean_margin", "samples", "seconds"],
            rows,
        )
    sys.stdout.write(text)
    print("method            clean    robust")
    for row in rows:
        print(f"{row[0]:<16} {row[1]:>7.4f} {row[2]:>8.4f}")
    return EXIT_OK


def _cmd_pca_export(args) -> int:
    bundle = bundle_io.load_bundle(args.bundle)
    projector = load_projector(args.projector)
    man = bundle.manifest
    text_xy = pca_coords(projector, bundle.text_features)
    rows = []
    for r in range(text_xy.shape[0]):
        rows.append(
            [
                "text",
                r // man.descriptions_per_class,
                r % man.descriptions_per_class,
                text_xy[r, 0],
                text_xy[r, 1],
            ]
        )
    if man.num_samples:
        flat = np.asarray(bundle.image_views, dtype=np.float64).reshape(-1, man.dim)
        img_xy = pca_coords(projector, flat)
        for r in range(img_xy.shape[0]):
            rows.append(
                [
                    "image",
                    int(bundle.labels[r // man.views_per_sample]),
                    r % man.views_per_sample,
                    img_xy[r, 0],
                    img_xy[r, 1],
                ]
            )
    _write_csv(args.out, ["kind", "class_index", "member_index", "c1", "c2"], rows)
    print(f"wrote {len(rows)} coordinate rows to {args.out}")
    return EXIT_OK


def _time_call(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cmd_bench_kernels(args) -> int:
    import os

    rng = np.random.default_rng(0)
    k, n, m = 100, 5, 50
    costs = rng.uniform(0, 2, (k, n, m))
    log_a = np.log(np.full(n, 1.0 / n))
    log_b = np.log(rng.dirichlet(np.full(m, 5.0), size=k))
    gram_small = rng.standard_normal((128, 400))
    gram_small = gram_small @ gram_small.T
    results = {}
    previous = os.environ.get("OTALIGN_BACKEND")
    backends = ["numpy"] + (["numba"] if _kernels.NUMBA_AVAILABLE else [])
    try:
        for name in backends:
            os.environ["OTALIGN_BACKEND"] = name
            _kernels.warmup()
            sink = _time_call(
                lambda: _kernels.sinkhorn_potentials_batch(
                    costs, log_a, log_b, 0.01, 500, 1e-6
                ),
                args.repeats,
            )
            eig = _time_call(lambda: _kernels.symmetric_eigh_desc(gram_small), args.repeats)
            results[name] = {"sinkhorn_batch_s": sink, "eigh_128_s": eig}
    finally:
        if previous is None:
            os.environ.pop("OTALIGN_BACKEND", None)
        else:
            os.environ["OTALIGN_BACKEND"] = previous
    payload = {"config": _resolved(args), "kernels": results}
    text = _dump_json(payload, args.out)
    sys.stdout.write(text)
    if len(results) == 2:
        for key in ("sinkhorn_batch_s", "eigh_128_s"):
            ratio = results["numpy"][key] / results["numba"][key]
            print(f"{key}: numba is {ratio:.1f}x the numpy path")
    return EXIT_OK


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "build-subspace": _cmd_build_subspace,
    "classify": _cmd_classify,
    "simulate-attack": _cmd_simulate_attack,
    "verify": _cmd_verify,
    "benchmark": _cmd_benchmark,
    "pca-export": _cmd_pca_export,
    "bench-kernels": _cmd_bench_kernels,
}

_OUTPUT_FLAGS = ("out", "out_json", "out_csv")


def _fresh_outputs(args):
    """Output paths that do not exist yet; only these are removed on failure."""
    fresh = []
    for flag in _OUTPUT_FLAGS:
        target = getattr(args, flag, None)
        if target and not Path(target).exists():
            fresh.append(Path(target))
    return fresh


def _cleanup_outputs(paths) -> None:
    for path in paths:
        try:
            if path.is_dir():
                shutil.rmtree(path)
            elif path.is_file():
                path.unlink()
        except OSError:
            pass


def _fail(fresh, code: int, kind: str, exc) -> int:
    _cleanup_outputs(fresh)
    sys.stderr.write(
        json.dumps({"error": {"type": kind, "message": str(exc)}}, sort_keys=True) + "\n"
    )
    return code


def main(argv=None) -> int:
    parser = build_parser()
    fresh = []
    try:
        args = parser.parse_args(argv)
        fresh = _fresh_outputs(args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        return _fail(fresh, EXIT_USAGE, "usage", exc)
    except ValueError as exc:
        return _fail(fresh, EXIT_USAGE, "usage", exc)
    except DataError as exc:
        return _fail(fresh, EXIT_DATA, "data", exc)
    except NumericalError as exc:
        return _fail(fresh, EXIT_NUMERICAL, "numerical", exc)
    except OSError as exc:
        return _fail(fresh, EXIT_DATA, "io", exc)


if __name__ == "__main__":
    sys.exit(main())
