"""Command-line entry point ``gmi-reg``.

Every subcommand accepts ``--config FILE``, a JSON object keyed by option
name, together with explicit flags; flags win over file values. Each run that
writes files also writes ``manifest.json`` into its output directory with the
command, the fully resolved configuration, SHA-256 digests of the inputs, the
tool version and start/end timestamps. Passing a manifest back as
``--config`` repeats the run.

Volume inputs are rawjson or NIfTI-1 paths, or ``phantom:`` URIs such as
``phantom:seed=1,modality=t2like,size=64,spacing=2.5``.

Exit codes: 0 success, 1 runtime failure, 2 usage error or unknown option,
3 missing input, 4 conflicting options.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, _parallel
from .capture import capture_report, capture_to_json, render_table, simulate_capture
from .errors import GmiRegError
from .landscape import PROBE_PRESETS, export_cube, generate_cube, load_cube, probe_line, probe_preset
from .metric import MetricSpec, MIFamily
from .montecarlo import (
    TrialConfig,
    export_plots_data,
    resolve_volume,
    run_essay,
    write_records,
)
from .optimizer import OptimizerConfig, register
from .phantom import PhantomSpec, generate_phantom
from .transform import DEFAULT_TRANSLATION_RANGE, AffineParams, TransformKind
from .volume import Volume, rawjson_paths, save_volume

__all__ = ["main", "parse_and_dispatch"]

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_MISSING, EXIT_CONFLICT = 0, 1, 2, 3, 4
MANIFEST_NAME = "manifest.json"


class CliError(Exception):
    code = EXIT_FAILURE


class UsageError(CliError):
    code = EXIT_USAGE


class UnknownOptionError(UsageError):
    pass


class MissingInputError(CliError):
    code = EXIT_MISSING


class ConflictError(CliError):
    code = EXIT_CONFLICT


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- options

def _option(p: argparse.ArgumentParser, flag: str, default=None, help: str = "", **kw):
    """Register a flag whose default lives in the resolved config, not in argparse.

    Parsed values stay ``None`` unless given, so config-file values can sit
    between defaults and flags.
    """
    dest = kw.pop("dest", flag.lstrip("-").replace("-", "_"))
    p._gmi_defaults[dest] = default
    shown = "" if default is None else f" (default: {default})"
    p.add_argument(flag, dest=dest, default=None, help=help + shown, **kw)


def _subparser(sub, name: str, help: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help, description=help)
    p._gmi_defaults = {}
    p.add_argument("--config", help="JSON file of option values (flags override it)")
    return p


def _metric_options(p):
    _option(p, "--metric", "shannon", help="MI family: " + ", ".join(f.value for f in MIFamily))
    _option(p, "--q", None, type=float, help="entropic index (required for Tsallis families)")
    _option(p, "--bits", None, type=int, help="keep this many high-order intensity bits (1-16)")
    _option(p, "--interp", "nearest", choices=["nearest", "trilinear", "lanczos", "fastlanczos"],
            help="interpolator")
    _option(p, "--outside", "exclude", choices=["exclude", "zero"],
            help="policy for fixed voxels mapped outside the moving volume")


def _jobs_option(p):
    _option(p, "--jobs", None, type=int, help="worker processes (default: machine parallelism)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmi-reg", description="Generalized mutual information registration toolkit.")
    parser.add_argument("--version", action="version", version=f"gmi-reg {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = _subparser(sub, "phantom", "Generate a synthetic phantom volume and its label volume.")
    _option(p, "--out", None, help="output rawjson path (required)")
    _option(p, "--size", 64, help="voxels per axis: N or X,Y,Z")
    _option(p, "--spacing", 1.0, help="mm per voxel: S or SX,SY,SZ")
    _option(p, "--seed", 0, type=int, help="random seed")
    _option(p, "--modality", "t1like", choices=["t1like", "t2like", "t1", "t2"], help="contrast")
    _option(p, "--structures", 4, type=int, help="number of nested tissue regions")
    _option(p, "--noise", 0.01, type=float, help="uniform noise amplitude, fraction of range (<= 0.02)")

    p = _subparser(sub, "landscape", "Evaluate a metric over a parameter cube.")
    _option(p, "--fixed", None, help="fixed volume path or phantom URI (required)")
    _option(p, "--moving", None, help="moving volume path or phantom URI (required)")
    _option(p, "--kind", "translation", choices=[k.value for k in TransformKind], help="transform family")
    _metric_options(p)
    _option(p, "--resolution", 21, type=int, help="odd number of samples per axis")
    _option(p, "--range", DEFAULT_TRANSLATION_RANGE, type=float, dest="translation_range",
            help="translation half-range in mm")
    _option(p, "--rotation-order", "zyx", help="Euler composition order, first letter applied last")
    _option(p, "--format", None, choices=["rawjson", "csv"], help="cube format (default: from --out suffix)")
    _option(p, "--out", None, help="output cube path (required)")
    _jobs_option(p)

    p = _subparser(sub, "probe", "Sample a metric cube along a line.")
    _option(p, "--cube", None, help="cube file (required)")
    _option(p, "--preset", None, choices=list(PROBE_PRESETS), help="named line through the cube")
    _option(p, "--start", None, help="start voxel index I,J,K")
    _option(p, "--end", None, help="end voxel index I,J,K")
    _option(p, "--samples", None, type=int, help="number of samples (default: one per voxel step)")
    _option(p, "--out", None, help="CSV output path (default: stdout)")

    p = _subparser(sub, "capture", "Estimate the capture range of a metric cube.")
    _option(p, "--cube", None, help="cube file (required)")
    _option(p, "--connectivity", 26, type=int, choices=[6, 26], help="neighbourhood")
    _option(p, "--direction", "maximize", choices=["maximize", "minimize"], help="optimization direction")
    _option(p, "--mode", "adjacent", choices=["adjacent", "seed"], help="comparison rule")
    _option(p, "--mask", None, help="also write the captured mask as a rawjson volume")
    _option(p, "--out", None, help="JSON output path (default: stdout)")

    p = _subparser(sub, "register", "Register a translation by gradient ascent.")
    _option(p, "--fixed", None, help="fixed volume path or phantom URI (required)")
    _option(p, "--moving", None, help="moving volume path or phantom URI (required)")
    _metric_options(p)
    _option(p, "--init", "0,0,0", help="start translation X,Y,Z in mm (write --init=-5,0,0 for a leading minus)")
    defaults = OptimizerConfig()
    _option(p, "--max-iterations", defaults.max_iterations, type=int, help="iteration cap")
    _option(p, "--initial-step", defaults.initial_step, type=float, help="first step length in mm")
    _option(p, "--relaxation", defaults.relaxation, type=float, help="step shrink factor")
    _option(p, "--min-step", defaults.min_step, type=float, help="convergence step length in mm")
    _option(p, "--fd-delta", defaults.fd_delta, type=float, help="central-difference probe in mm")
    _option(p, "--trace", False, action="store_true", help="include the trajectory in the result")
    _option(p, "--out", None, help="JSON output path (default: stdout)")

    p = _subparser(sub, "montecarlo", "Run a Monte Carlo registration essay.")
    _option(p, "--scenario", "T1", help="T1, T2, RandomizedT1 or RandomizedT2")
    _option(p, "--trials", 1000, type=int, help="number of trials")
    _option(p, "--sigma", 50.0, type=float, help="start translation deviation in mm")
    _option(p, "--seed", 0, type=int, dest="master_seed", help="master seed")
    _option(p, "--out", None, help="records JSON-lines path (required)")
    _jobs_option(p)
    p._gmi_defaults.update({
        "spec": MetricSpec().to_json(),
        "optimizer": OptimizerConfig().to_json(),
        "subject_pool": [],
        "thresholds": [1.0, 3.0, 5.0],
    })

    p = _subparser(sub, "report", "Merge capture or Monte Carlo summaries into one table.")
    p.add_argument("inputs", nargs="*", help="capture JSON files or Monte Carlo summary files")
    p._gmi_defaults["inputs"] = []
    _option(p, "--format", "markdown", choices=["markdown", "csv"], help="table format")
    _option(p, "--out", None, help="output path (default: stdout)")
    return parser


# ---------------------------------------------------------------- helpers

def _resolve_config(p: argparse.ArgumentParser, command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(p._gmi_defaults)
    if ns.config is not None:
        path = Path(ns.config)
        if not path.is_file():
            raise MissingInputError(f"missing input: config file {path} not found")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        if "command" in loaded and "config" in loaded:
            if loaded["command"] != command:
                raise ConflictError(f"manifest {path} records command {loaded['command']!r}, not {command!r}")
            loaded = loaded["config"]
        for key, value in loaded.items():
            dest = key.replace("-", "_")
            if dest not in cfg:
                raise UnknownOptionError(f"unknown option {key!r} in config file {path}")
            cfg[dest] = value
    for dest in p._gmi_defaults:
        value = getattr(ns, dest, None)
        if value is not None and value != []:
            cfg[dest] = value
    return cfg


def _vec3(value, cast, name: str) -> tuple:
    if isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = [s for s in str(value).split(",") if s.strip()]
    try:
        parts = [cast(x) for x in parts]
    except ValueError:
        raise UsageError(f"--{name} expects numbers, got {value!r}") from None
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise UsageError(f"--{name} expects one or three comma-separated values, got {value!r}")
    return tuple(parts)


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _input_files(ident: str) -> list[Path]:
    p = Path(ident)
    if p.suffix in (".nii", ".img"):
        return [p]
    if p.suffix == ".hdr":
        return [p, p.with_suffix(".img")]
    return list(rawjson_paths(p))


def _check_volume_input(ident: str) -> None:
    if ident.startswith("phantom:"):
        return
    for f in _input_files(ident):
        if not f.is_file():
            raise MissingInputError(f"missing input: {ident} ({f} not found)")


def _check_file(path) -> None:
    if not Path(path).is_file():
        raise MissingInputError(f"missing input: {path} not found")


def _check_cube_input(path) -> None:
    p = Path(path)
    files = [p, Path(str(p) + ".json")] if p.suffix == ".csv" else list(rawjson_paths(p))
    for f in files:
        if not f.is_file():
            raise MissingInputError(f"missing input: {path} ({f} not found)")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digests(idents: Sequence[str]) -> dict:
    out = {}
    for ident in idents:
        if ident.startswith("phantom:"):
            out[ident] = "generated"
            continue
        for f in _input_files(ident) if not ident.endswith((".csv", ".jsonl")) else [Path(ident)]:
            if f.is_file():
                out[str(f)] = _sha256(f)
    return out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def _write_manifest(out_dir: Path, command: str, cfg: dict, inputs: dict, outputs: list, started: str) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "inputs": inputs,
        "outputs": [str(o) for o in outputs],
        "started": started,
        "finished": _now(),
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _out_dir(path) -> Path:
    d = Path(path).resolve().parent
    d.mkdir(parents=True, exist_ok=True)
    return d


def _metric_spec(cfg: dict) -> MetricSpec:
    family = MIFamily.parse(cfg["metric"])
    q = cfg.get("q")
    if family is MIFamily.SHANNON:
        if q is not None and float(q) != 1.0:
            raise ConflictError(f"--q {q} conflicts with --metric shannon (Shannon has no entropic index)")
        q = 1.0
    elif q is None:
        raise UsageError(f"--metric {family.value} needs --q")
    cfg["metric"], cfg["q"] = family.value, float(q)
    return MetricSpec(family, q, cfg.get("bits"), cfg["interp"], cfg["outside"])


def _jobs(cfg: dict) -> int:
    jobs = cfg.get("jobs")
    jobs = _parallel.default_jobs() if jobs is None else int(jobs)
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return jobs


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        _out_dir(out)
        Path(out).write_text(text, encoding="utf-8")


def method_label(spec: MetricSpec) -> str:
    """Row label in the Monte Carlo table, e.g. ``Tsallis Nearest (1.5)``."""
    names = {
        MIFamily.SHANNON: "Shannon",
        MIFamily.TSALLIS_NONADDITIVE: "Tsallis",
        MIFamily.TSALLIS_ADDITIVE: "Tsallis Additive",
        MIFamily.YAMANO: "Yamano",
        MIFamily.SPARAVIGNA: "Sparavigna",
    }
    label = f"{names[spec.family]} {spec.interp.kind.value.capitalize()}"
    if spec.family is not MIFamily.SHANNON:
        label += f" ({spec.q:g})"
    if spec.binning_bits is not None:
        label += f" {spec.binning_bits} bit"
    return label


# ---------------------------------------------------------------- commands

def cmd_phantom(cfg: dict) -> tuple[list, list]:
    _require(cfg, "out")
    spec = PhantomSpec(
        size=_vec3(cfg["size"], int, "size"),
        spacing=_vec3(cfg["spacing"], float, "spacing"),
        seed=int(cfg["seed"]),
        modality=cfg["modality"],
        structure_count=int(cfg["structures"]),
        noise=float(cfg["noise"]),
    )
    cfg["size"], cfg["spacing"] = list(spec.size), list(spec.spacing)
    volume, labels = generate_phantom(spec, with_labels=True)
    out = Path(cfg["out"])
    _out_dir(out)
    save_volume(volume, out)
    stem = rawjson_paths(out)[0].with_suffix("")
    label_path = stem.with_name(stem.name + "_labels")
    save_volume(Volume(labels.astype(np.uint8), volume.spacing, volume.origin), label_path)
    return [], [*rawjson_paths(out), *rawjson_paths(label_path)]


def cmd_landscape(cfg: dict) -> tuple[list, list]:
    _require(cfg, "fixed", "moving", "out")
    spec = _metric_spec(cfg)
    for ident in (cfg["fixed"], cfg["moving"]):
        _check_volume_input(ident)
    fmt = cfg.get("format") or ("csv" if str(cfg["out"]).endswith(".csv") else "rawjson")
    cfg["format"] = fmt
    fixed, moving = resolve_volume(cfg["fixed"]), resolve_volume(cfg["moving"])
    cube = generate_cube(
        fixed, moving, cfg["kind"], spec, int(cfg["resolution"]),
        jobs=_jobs(cfg), translation_range=float(cfg["translation_range"]),
        rotation_order=cfg["rotation_order"], fixed_id=cfg["fixed"], moving_id=cfg["moving"],
    )
    _out_dir(cfg["out"])
    export_cube(cube, cfg["out"], fmt)
    outputs = [cfg["out"], cfg["out"] + ".json"] if fmt == "csv" else list(rawjson_paths(cfg["out"]))
    return [cfg["fixed"], cfg["moving"]], outputs


def cmd_probe(cfg: dict) -> tuple[list, list]:
    _require(cfg, "cube")
    has_line = cfg.get("start") is not None or cfg.get("end") is not None
    if cfg.get("preset") is not None and has_line:
        raise ConflictError("--preset conflicts with --start/--end; give one or the other")
    if cfg.get("preset") is None and (cfg.get("start") is None or cfg.get("end") is None):
        raise UsageError("probe needs --preset or both --start and --end")
    _check_cube_input(cfg["cube"])
    cube = load_cube(cfg["cube"])
    n = None if cfg.get("samples") is None else int(cfg["samples"])
    if cfg.get("preset") is not None:
        samples = probe_preset(cube, cfg["preset"], n)
    else:
        samples = probe_line(cube, _vec3(cfg["start"], int, "start"), _vec3(cfg["end"], int, "end"), n)
    text = "position,value\n" + "".join(f"{t!r},{v!r}\n" for t, v in samples)
    _emit(text, cfg.get("out"))
    return [cfg["cube"]], [cfg["out"]] if cfg.get("out") else []


def cmd_capture(cfg: dict) -> tuple[list, list]:
    _require(cfg, "cube")
    _check_cube_input(cfg["cube"])
    cube = load_cube(cfg["cube"])
    res = simulate_capture(cube, int(cfg["connectivity"]), cfg["direction"], cfg["mode"])
    _emit(capture_to_json(cube.spec, cube.kind, res), cfg.get("out"))
    outputs = [cfg["out"]] if cfg.get("out") else []
    if cfg.get("mask"):
        _out_dir(cfg["mask"])
        res.save_mask(cfg["mask"])
        outputs += list(rawjson_paths(cfg["mask"]))
    return [cfg["cube"]], outputs


def cmd_register(cfg: dict) -> tuple[list, list]:
    _require(cfg, "fixed", "moving")
    spec = _metric_spec(cfg)
    for ident in (cfg["fixed"], cfg["moving"]):
        _check_volume_input(ident)
    init = _vec3(cfg["init"], float, "init")
    opt = OptimizerConfig(
        int(cfg["max_iterations"]), float(cfg["initial_step"]), float(cfg["relaxation"]),
        float(cfg["min_step"]), float(cfg["fd_delta"]),
    )
    fixed, moving = resolve_volume(cfg["fixed"]), resolve_volume(cfg["moving"])
    res = register(fixed, moving, AffineParams(TransformKind.TRANSLATION, init), spec, opt,
                   trace=bool(cfg["trace"]))
    out = res.to_json(include_trajectory=bool(cfg["trace"]))
    out["spec"] = spec.to_json()
    out["init"] = list(init)
    if cfg.get("out"):
        _out_dir(cfg["out"])
    _emit(json.dumps(out, indent=2) + "\n", cfg.get("out"))
    return [cfg["fixed"], cfg["moving"]], [cfg["out"]] if cfg.get("out") else []


def cmd_montecarlo(cfg: dict) -> tuple[list, list]:
    _require(cfg, "out")
    if not cfg["subject_pool"]:
        raise UsageError("montecarlo needs a subject_pool in its --config file")
    trial_keys = ("scenario", "trials", "sigma", "master_seed", "spec", "optimizer", "subject_pool", "thresholds")
    try:
        tc = TrialConfig.from_json({k: cfg[k] for k in trial_keys})
    except TypeError as exc:
        raise UsageError(f"invalid essay configuration: {exc}") from None
    cfg.update(tc.to_json())
    idents = sorted({i for s in tc.subject_pool for i in (s.t1, s.t2) if i is not None})
    for ident in idents:
        _check_volume_input(ident)
    records = run_essay(tc, jobs=_jobs(cfg))
    out = Path(cfg["out"])
    out_dir = _out_dir(out)
    write_records(records, out)
    plots, summary_path = out_dir / "plots.csv", out_dir / "summary.json"
    summary = export_plots_data(records, plots, tc.thresholds, summary_path)
    summary.update({"method": method_label(tc.spec), "scenario": tc.scenario.value})
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return idents, [out, plots, summary_path]


def _load_artifact(path: str) -> dict:
    _check_file(path)
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GmiRegError(f"{path}: not a JSON artifact ({exc})") from None
    if not isinstance(obj, dict) or obj.get("type") not in ("capture", "montecarlo-summary"):
        raise GmiRegError(f"{path}: not a capture result or Monte Carlo summary")
    return obj


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def cmd_report(cfg: dict, inputs: list[str]) -> tuple[list, list]:
    if not inputs:
        raise UsageError("report needs at least one input file")
    artifacts = [_load_artifact(p) for p in inputs]
    types = {a["type"] for a in artifacts}
    if len(types) > 1:
        raise ConflictError("report inputs mix capture results and Monte Carlo summaries")
    if types == {"capture"}:
        rows = [(MetricSpec.from_json(a["spec"]), a["kind"], float(a["rate"])) for a in artifacts]
        text = capture_report(rows, cfg["format"])
    else:
        keys = list(artifacts[0]["within"])
        if any(list(a["within"]) != keys for a in artifacts):
            raise ConflictError("Monte Carlo summaries use different distance thresholds")
        header = ["Method", "Scenario", "Mean", "Deviation"] + keys
        body = [
            [a.get("method", ""), a.get("scenario", ""), _fmt(a["mean"]), _fmt(a["deviation"])]
            + [_fmt(a["within"][k]) for k in keys]
            for a in artifacts
        ]
        text = render_table(header, body, cfg["format"])
    if cfg.get("out"):
        _out_dir(cfg["out"])
    _emit(text, cfg.get("out"))
    return list(inputs), [cfg["out"]] if cfg.get("out") else []


_COMMANDS = {
    "phantom": cmd_phantom,
    "landscape": cmd_landscape,
    "probe": cmd_probe,
    "capture": cmd_capture,
    "register": cmd_register,
    "montecarlo": cmd_montecarlo,
}


# ---------------------------------------------------------------- dispatch

def _run(argv: list[str]) -> int:
    parser = build_parser()
    ns, extras = parser.parse_known_args(argv)
    if extras:
        raise UnknownOptionError(f"unknown option {extras[0]!r}")
    if ns.command is None:
        raise UsageError("no command given; run 'gmi-reg --help'")
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    cfg = _resolve_config(sub, ns.command, ns)
    started = _now()
    if ns.command == "report":
        inputs, outputs = cmd_report(cfg, list(cfg["inputs"]))
    else:
        inputs, outputs = _COMMANDS[ns.command](cfg)
    if outputs:
        _write_manifest(_out_dir(outputs[0]), ns.command, cfg, _digests(inputs), outputs, started)
    return EXIT_OK


def parse_and_dispatch(argv: Sequence[str]) -> int:
    """Run one command line; returns the process exit code."""
    try:
        return _run(list(argv))
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except CliError as exc:
        print(f"gmi-reg: error: {exc}", file=sys.stderr)
        return exc.code
    except (GmiRegError, ValueError, IndexError, OSError) as exc:
        print(f"gmi-reg: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main(argv: Sequence[str] | None = None) -> int:
    code = parse_and_dispatch(sys.argv[1:] if argv is None else argv)
    if argv is None:
        sys.exit(code)
    return code
