"""Command-line surface: tmap, analyze, compare, simulate, quantile.

Exit codes: 0 success, 1 I/O failure, 2 usage or validation error,
3 simulation validation bound exceeded.

Every value flag can also come from a JSON config file (--config);
explicit flags override file values, and each run writes its fully
resolved configuration next to its outputs so results are auditable.
Stochastic commands require an explicit seed; there is no fallback
entropy source.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .fdr import apply_fdr_to_clusters
from .permnull import PermutationConfig, analyze_contrast
from .report import (
    emit_analyzed_csv,
    emit_comparison_csv,
    emit_scatter_svg,
    join_tables,
    read_analyzed_csv,
    read_published_csv,
    summarize,
)
from .stats import one_sample_tmap, t_upper_quantile
from .synth import SphereSignal, SynthConfig, run_trials
from .volume import RAW_SUFFIX, load_subject_stack, write_nifti, write_raw

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3

_REQUIRED = object()


class UsageError(ValueError):
    """Bad flag/config combination; maps to exit code 2."""


_DEFAULTS = {
    "tmap": {
        "subjects": _REQUIRED,
        "mask": _REQUIRED,
        "out": _REQUIRED,
        "mask_threshold": 0.0,
        "negate": False,
    },
    "analyze": {
        "subjects": _REQUIRED,
        "mask": _REQUIRED,
        "out_dir": _REQUIRED,
        "seed": _REQUIRED,
        "realizations": 5000,
        "cdt": [0.001, 0.01],
        "alpha": 0.05,
        "connectivity": "corners26",
        "threads": 1,
        "mask_threshold": 0.0,
        "negate": False,
        "contrast_id": "contrast",
    },
    "compare": {
        "published": _REQUIRED,
        "analyzed": _REQUIRED,
        "out_dir": _REQUIRED,
        "alpha_rft": 0.05,
        "alpha_fdr": 0.05,
        "cdt_label": "",
    },
    "simulate": {
        "out_dir": _REQUIRED,
        "seed": _REQUIRED,
        "trials": 200,
        "dims": [20, 20, 20],
        "n_subjects": 20,
        "fwhm": 2.0,
        "realizations": 500,
        "cdt": 0.01,
        "alpha": 0.05,
        "connectivity": "corners26",
        "threads": 1,
        "signal_center": None,
        "signal_radius": None,
        "signal_amplitude": None,
        "bound": None,
    },
    "quantile": {
        "p": _REQUIRED,
        "df": _REQUIRED,
    },
}


def _load_config_file(path):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(obj, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return obj


def _resolve(args, command):
    """Layer defaults <- config file <- explicit flags; check required."""
    merged = dict(_DEFAULTS[command])
    cli = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    config_path = cli.pop("config", None)
    if config_path is not None:
        for key, value in _load_config_file(config_path).items():
            if key in ("command", "derived", "subjects_resolved"):
                continue
            if key not in merged:
                raise UsageError(f"config file {config_path}: unknown key {key!r}")
            merged[key] = value
    merged.update(cli)
    missing = [k for k, v in merged.items() if v is _REQUIRED]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in sorted(missing))
        raise UsageError(f"missing required option(s): {flags}")
    return merged


def _as_int(cfg, key, minimum=None):
    value = cfg[key]
    if isinstance(value, bool) or int(value) != value:
        raise UsageError(f"--{key.replace('_', '-')} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise UsageError(f"--{key.replace('_', '-')} must be >= {minimum}, got {value}")
    return value


def _as_float(cfg, key):
    try:
        return float(cfg[key])
    except (TypeError, ValueError):
        raise UsageError(f"--{key.replace('_', '-')} must be a number, got {cfg[key]!r}")


def _as_bool(cfg, key):
    value = cfg[key]
    if not isinstance(value, bool):
        raise UsageError(f"{key} must be true/false, got {value!r}")
    return value


def _resolve_subjects(spec):
    """A directory (lexicographic order) or an ordered list file."""
    p = Path(spec)
    if p.is_dir():
        names = sorted(
            e.name
            for e in p.iterdir()
            if e.is_file() and (e.name.endswith(".nii") or e.name.endswith(RAW_SUFFIX))
        )
        paths = [str(p / n) for n in names]
    else:
        paths = []
        for line in p.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            entry = Path(line)
            if not entry.is_absolute():
                entry = p.parent / entry
            paths.append(str(entry))
    if not paths:
        raise UsageError(f"no subject volumes found in {spec}")
    return paths


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _emit_config(path, command, cfg, derived=None):
    obj = {"command": command}
    obj.update(cfg)
    if derived:
        obj["derived"] = derived
    _write_json(path, obj)


def cmd_tmap(args):
    cfg = _resolve(args, "tmap")
    subject_paths = _resolve_subjects(cfg["subjects"])
    stack = load_subject_stack(
        subject_paths,
        cfg["mask"],
        threshold=_as_float(cfg, "mask_threshold"),
        negate=_as_bool(cfg, "negate"),
    )
    tmap = one_sample_tmap(stack, np.ones(stack.n_subjects, dtype=np.int64))
    out = Path(cfg["out"])
    if out.name.endswith(RAW_SUFFIX):
        write_raw(tmap.volume, out)
    elif out.name.endswith(".nii"):
        write_nifti(tmap.volume, out)
    else:
        raise UsageError(f"--out must end with .nii or {RAW_SUFFIX}")
    cfg["subjects_resolved"] = subject_paths
    _emit_config(
        str(out) + ".config.json",
        "tmap",
        cfg,
        derived={"df": tmap.df, "n_subjects": stack.n_subjects},
    )
    print(
        f"n_subjects={stack.n_subjects} df={tmap.df} "
        f"zero_variance_voxels={tmap.zero_variance_count}"
    )
    return EXIT_OK


def _cdt_list(cfg):
    raw = cfg["cdt"]
    if not isinstance(raw, (list, tuple)):
        raw = [raw]
    cdts = []
    for value in raw:
        value = float(value)
        if not 0.0 < value < 0.5:
            raise UsageError(f"--cdt must be in (0, 0.5), got {value}")
        cdts.append(value)
    return cdts


def cmd_analyze(args):
    cfg = _resolve(args, "analyze")
    seed = _as_int(cfg, "seed")
    realizations = _as_int(cfg, "realizations", minimum=1)
    threads = _as_int(cfg, "threads", minimum=1)
    alpha = _as_float(cfg, "alpha")
    cdts = _cdt_list(cfg)
    contrast_id = str(cfg["contrast_id"])
    subject_paths = _resolve_subjects(cfg["subjects"])
    stack = load_subject_stack(
        subject_paths,
        cfg["mask"],
        threshold=_as_float(cfg, "mask_threshold"),
        negate=_as_bool(cfg, "negate"),
    )
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg["subjects_resolved"] = subject_paths

    for cdt in cdts:
        perm_cfg = PermutationConfig(
            master_seed=seed,
            realizations=realizations,
            cdt_p=cdt,
            connectivity=cfg["connectivity"],
            alpha_fdr=alpha,
        )
        clusters, dist = analyze_contrast(stack, perm_cfg, threads=threads)
        scored = apply_fdr_to_clusters(clusters, alpha)
        suffix = f"cdt{cdt:g}"
        emit_analyzed_csv({contrast_id: scored}, out_dir / f"clusters_{suffix}.csv")
        dist.save(out_dir / f"null_{suffix}.json")
        run_cfg = dict(cfg)
        run_cfg["cdt"] = cdt
        # The worker count never changes a result, so it is not part of
        # the recorded configuration; recording it would break byte
        # determinism across thread counts.
        run_cfg.pop("threads", None)
        _emit_config(
            out_dir / f"config_{suffix}.json",
            "analyze",
            run_cfg,
            derived={
                "df": dist.df,
                "n_subjects": stack.n_subjects,
                "t_threshold": dist.t_threshold,
                "connectivity": dist.connectivity.value,
            },
        )
        n_sig = sum(1 for c in scored if c.significant_fdr)
        print(
            f"cdt={cdt:g} t_threshold={dist.t_threshold:.6f} "
            f"clusters={len(scored)} significant_fdr={n_sig}"
        )
    return EXIT_OK


def _slug(text):
    safe = [c if c.isalnum() or c in "._-" else "_" for c in text]
    return "".join(safe) or "contrast"


def cmd_compare(args):
    cfg = _resolve(args, "compare")
    alpha_rft = _as_float(cfg, "alpha_rft")
    alpha_fdr = _as_float(cfg, "alpha_fdr")
    published = read_published_csv(cfg["published"])
    analyzed = read_analyzed_csv(cfg["analyzed"])
    rows, unmatched = join_tables(published, analyzed, alpha_rft=alpha_rft)
    summary = summarize(rows, alpha_rft=alpha_rft, alpha_fdr=alpha_fdr)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_comparison_csv(rows, out_dir / "comparison.csv")

    groups = {}
    for row in rows:
        groups.setdefault(row.contrast_id, []).append(row)
    svg_files = []
    if groups:
        for cid in sorted(groups):
            name = f"scatter_{_slug(cid)}.svg"
            emit_scatter_svg(groups[cid], out_dir / name, cdt_label=cfg["cdt_label"])
            svg_files.append(name)
    else:
        emit_scatter_svg([], out_dir / "scatter.svg", cdt_label=cfg["cdt_label"])
        svg_files.append("scatter.svg")

    _write_json(
        out_dir / "summary.json",
        {
            "alpha_rft": summary.alpha_rft,
            "alpha_fdr": summary.alpha_fdr,
            "n_rows": summary.n_rows,
            "quadrants": {
                "rft_and_fdr": summary.n_rft_and_fdr,
                "rft_only": summary.n_rft_only,
                "fdr_only": summary.n_fdr_only,
                "neither": summary.n_neither,
            },
            "min_p_rft_fdr_fail": summary.min_p_rft_fdr_fail,
            "max_p_rft_fdr_pass": summary.max_p_rft_fdr_pass,
            "unmatched": [
                {"side": u.side, "contrast_id": u.contrast_id, "extent": u.extent}
                for u in unmatched
            ],
            "svg_files": svg_files,
            "config": dict(cfg),
        },
    )
    print(
        f"rows={summary.n_rows} rft_and_fdr={summary.n_rft_and_fdr} "
        f"rft_only={summary.n_rft_only} fdr_only={summary.n_fdr_only} "
        f"neither={summary.n_neither} unmatched={len(unmatched)}"
    )
    return EXIT_OK


def _signal_from(cfg):
    center = cfg["signal_center"]
    radius = cfg["signal_radius"]
    amplitude = cfg["signal_amplitude"]
    given = [v is not None for v in (center, radius, amplitude)]
    if not any(given):
        return None
    if not all(given):
        raise UsageError(
            "--signal-center, --signal-radius and --signal-amplitude "
            "must be given together"
        )
    if len(center) != 3:
        raise UsageError("--signal-center needs three coordinates")
    return SphereSignal(
        center=tuple(float(c) for c in center),
        radius=float(radius),
        amplitude=float(amplitude),
    )


def cmd_simulate(args):
    cfg = _resolve(args, "simulate")
    seed = _as_int(cfg, "seed")
    trials = _as_int(cfg, "trials", minimum=1)
    threads = _as_int(cfg, "threads", minimum=1)
    alpha = _as_float(cfg, "alpha")
    dims = cfg["dims"]
    if not isinstance(dims, (list, tuple)) or len(dims) != 3:
        raise UsageError("--dims needs three integers")
    signal = _signal_from(cfg)
    bound = cfg["bound"]
    if bound is None:
        # Under the complete null any-rejection is FWER-like and must
        # stay near alpha; with a planted signal rejections are the point.
        bound = 0.10 if signal is None else 1.0
    bound = float(bound)
    cfg["bound"] = bound

    template = SynthConfig(
        master_seed=seed,
        dims=tuple(int(d) for d in dims),
        n_subjects=_as_int(cfg, "n_subjects", minimum=2),
        fwhm_vox=_as_float(cfg, "fwhm"),
        signal=signal,
        trial_index=1,
    )
    perm_cfg = PermutationConfig(
        master_seed=seed,
        realizations=_as_int(cfg, "realizations", minimum=1),
        cdt_p=_as_float(cfg, "cdt"),
        connectivity=cfg["connectivity"],
        alpha_fdr=alpha,
    )
    outcomes, agg = run_trials(template, trials, perm_cfg, threads=threads)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = dict(cfg)
    resolved.pop("threads", None)
    if signal is not None:
        resolved["signal_center"] = list(signal.center)
    _write_json(
        out_dir / "summary.json",
        {
            "trials": agg.trials,
            "alpha_fdr": agg.alpha_fdr,
            "mean_fdp": agg.mean_fdp,
            "any_rejection_fraction": agg.any_rejection_fraction,
            "ci95": list(agg.ci95),
            "config": resolved,
        },
    )
    print(
        f"trials={agg.trials} mean_fdp={agg.mean_fdp:.6f} "
        f"any_rejection_fraction={agg.any_rejection_fraction:.6f} "
        f"ci95=[{agg.ci95[0]:.6f}, {agg.ci95[1]:.6f}]"
    )
    if agg.any_rejection_fraction > bound:
        print(
            f"validation failed: any_rejection_fraction "
            f"{agg.any_rejection_fraction:.6f} > bound {bound:.6f}",
            file=sys.stderr,
        )
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_quantile(args):
    cfg = _resolve(args, "quantile")
    p = _as_float(cfg, "p")
    df = _as_int(cfg, "df", minimum=1)
    print(f"{t_upper_quantile(p, df):.6f}")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="permfdr",
        description=(
            "Permutation-based cluster-level inference with FDR control "
            "for volumetric statistical maps."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    s = argparse.SUPPRESS

    def add_config(sp):
        sp.add_argument("--config", default=s, help="JSON config file; flags override it")

    p_tmap = sub.add_parser("tmap", help="write the observed one-sample t map")
    p_tmap.add_argument("--subjects", default=s, help="directory or ordered list file")
    p_tmap.add_argument("--mask", default=s, help="mask volume (inside where > threshold)")
    p_tmap.add_argument("--out", default=s, help="output volume path")
    p_tmap.add_argument("--mask-threshold", dest="mask_threshold", type=float, default=s)
    p_tmap.add_argument("--negate", action="store_true", default=s,
                        help="flip the contrast sign of every subject")
    add_config(p_tmap)
    p_tmap.set_defaults(func=cmd_tmap)

    p_an = sub.add_parser("analyze", help="permutation null, cluster p and q values")
    p_an.add_argument("--subjects", default=s, help="directory or ordered list file")
    p_an.add_argument("--mask", default=s)
    p_an.add_argument("--out-dir", dest="out_dir", default=s)
    p_an.add_argument("--seed", type=int, default=s, help="master seed (required)")
    p_an.add_argument("--realizations", type=int, default=s, help="sign-flip count B")
    p_an.add_argument("--cdt", type=float, action="append", default=s,
                      help="cluster-defining p threshold; repeatable")
    p_an.add_argument("--alpha", type=float, default=s, help="FDR level")
    p_an.add_argument("--connectivity", default=s, choices=["faces6", "edges18", "corners26", "6", "18", "26"])
    p_an.add_argument("--threads", type=int, default=s)
    p_an.add_argument("--mask-threshold", dest="mask_threshold", type=float, default=s)
    p_an.add_argument("--negate", action="store_true", default=s)
    p_an.add_argument("--contrast-id", dest="contrast_id", default=s)
    add_config(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_cmp = sub.add_parser("compare", help="join a published RFT-FWE table with an analysis")
    p_cmp.add_argument("--published", default=s, help="CSV: contrast_id,extent,p_rft_fwe")
    p_cmp.add_argument("--analyzed", default=s, help="CSV written by analyze")
    p_cmp.add_argument("--out-dir", dest="out_dir", default=s)
    p_cmp.add_argument("--alpha-rft", dest="alpha_rft", type=float, default=s)
    p_cmp.add_argument("--alpha-fdr", dest="alpha_fdr", type=float, default=s)
    p_cmp.add_argument("--cdt-label", dest="cdt_label", default=s, help="label for the plot title")
    add_config(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_sim = sub.add_parser("simulate", help="Monte Carlo FDR validation on synthetic fields")
    p_sim.add_argument("--out-dir", dest="out_dir", default=s)
    p_sim.add_argument("--seed", type=int, default=s, help="master seed (required)")
    p_sim.add_argument("--trials", type=int, default=s)
    p_sim.add_argument("--dims", type=int, nargs=3, default=s)
    p_sim.add_argument("--n-subjects", dest="n_subjects", type=int, default=s)
    p_sim.add_argument("--fwhm", type=float, default=s, help="smoothing FWHM in voxels")
    p_sim.add_argument("--realizations", type=int, default=s)
    p_sim.add_argument("--cdt", type=float, default=s)
    p_sim.add_argument("--alpha", type=float, default=s)
    p_sim.add_argument("--connectivity", default=s, choices=["faces6", "edges18", "corners26", "6", "18", "26"])
    p_sim.add_argument("--threads", type=int, default=s)
    p_sim.add_argument("--signal-center", dest="signal_center", type=float, nargs=3, default=s)
    p_sim.add_argument("--signal-radius", dest="signal_radius", type=float, default=s)
    p_sim.add_argument("--signal-amplitude", dest="signal_amplitude", type=float, default=s)
    p_sim.add_argument("--bound", type=float, default=s,
                       help="max tolerated any-rejection fraction (exit 3 above it)")
    add_config(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_q = sub.add_parser("quantile", help="upper-tail t quantile for a p, df pair")
    p_q.add_argument("--p", type=float, default=s, help="upper-tail probability in (0, 0.5]")
    p_q.add_argument("--df", type=int, default=s)
    add_config(p_q)
    p_q.set_defaults(func=cmd_quantile)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
