"""Command-line interface: ``fdjcas {patterns,sweep,sense,validate,replay}``.

Exit codes: 0 success, 2 infeasible design, 3 configuration error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, abf, hbf
from .array import ArrayConfig, WaveformConfig, abf_gains, angle_grid, steering_vector, to_db
from .errors import ConfigError, FullRankNullspace, Infeasible, LoadError
from .metrics import score_detections, sweep_epsilon, sweep_mu, sweep_nfreq
from .nsp import NspConfig, average_si_suppression, beamformed_si
from .radarsim import AbfDesigner, HbfDesigner, ScanSettings, TargetSpec, _json_default, config_hash, scan
from .schema import SCENARIO_SCHEMA
from .sichannel import SiErrorConfig, load_si_channel, perturb_estimate, synth_si_channel

log = logging.getLogger("fdjcas")

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4
ABF_CONFIGS = ("CF_A", "CF_B", "CF_C", "CPSL")
DEFAULT_ISOLATION_DB = 36.0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- loading


def _error_key(err: jsonschema.ValidationError) -> str:
    path = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        path.append(missing[0] if missing else "?")
    elif err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        path.append(extra[0] if extra else "?")
    return ".".join(path) or "<root>"


def validate_doc(doc) -> None:
    """Schema check; raises ConfigError naming the offending key."""
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        key = _error_key(e)
        raise ConfigError(f"{key}: {e.message}", key=key)


def load_scenario(path) -> tuple[dict, Path]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", key="<root>") from exc
    validate_doc(doc)
    return doc, Path(path).resolve().parent


def _wrap(key, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: {exc}", key=key) from exc


def build_waveform(doc) -> WaveformConfig:
    return _wrap("waveform", WaveformConfig, **doc["waveform"])


def build_array(doc, wf: WaveformConfig, l_rf_tx=None, l_rf_rx=None) -> ArrayConfig:
    a = dict(doc["array"])
    if l_rf_tx is not None:
        a["l_rf_tx"] = l_rf_tx
    if l_rf_rx is not None:
        a["l_rf_rx"] = l_rf_rx
    a.setdefault("d_ant", wf.center_wavelength / 2)
    return _wrap("array", ArrayConfig, **a)


def build_nsp(doc) -> NspConfig:
    n = doc.get("nsp", {})
    subs = n.get("null_subcarriers", "uniform")
    return _wrap(
        "nsp",
        NspConfig,
        n_freq=n.get("n_freq", 0),
        null_subcarriers=None if subs == "uniform" else tuple(subs),
        null_angles_deg=tuple(n.get("null_angles_deg", ())),
        svd_rcond=n.get("svd_rcond", 1e-10),
    )


def _mu(values) -> tuple:
    return tuple(-math.inf if v is None else float(v) for v in values)


def build_hbf(doc, wf, cfg, nsp, theta_rad=None, mu=None, rf_assignment=None) -> hbf.HbfScenario:
    b = doc["beams"]
    mu = b.get("mu_db") if mu is None else mu
    if mu is None:
        raise ConfigError("hybrid designs need beams.mu_db", key="beams.mu_db")
    return _wrap(
        "beams",
        hbf.HbfScenario,
        cfg,
        wf,
        b["theta_rad"] if theta_rad is None else theta_rad,
        tuple(b["theta_comm"]),
        _mu(mu),
        tuple(b["stream_powers"]) if "stream_powers" in b else None,
        nsp,
        rf_assignment if rf_assignment is not None else b.get("rf_assignment", "search"),
    )


def _rho(doc) -> tuple[float, tuple]:
    b = doc["beams"]
    u = len(b["theta_comm"])
    rho = b.get("rho")
    if rho is None:
        rho = [1.0 / (u + 1)] * (u + 1)
    if len(rho) != u + 1:
        raise ConfigError("beams.rho lists the radar share followed by one share per user", key="beams.rho")
    total = sum(rho)
    if total <= 0:
        raise ConfigError("beams.rho must not be all zero", key="beams.rho")
    if abs(total - 1) > 1e-9:
        raise ConfigError(f"beams.rho sums to {total}, expected 1", key="beams.rho")
    rho = [r / total for r in rho]
    return rho[0], tuple(rho[1:])


def build_abf(doc, wf, cfg, nsp, config="CF_A") -> abf.AbfScenario:
    rho_rad, rho_comm = _rho(doc)
    b = doc["beams"]
    return _wrap("beams", abf.AbfScenario, cfg, wf, b["theta_rad"], tuple(b["theta_comm"]), rho_rad, rho_comm, nsp, config)


def build_mask_kwargs(doc) -> dict:
    m = doc.get("mask", {})
    kw = {k: m[k] for k in ("g_max_db", "delta_deg", "cpsl_db") if k in m}
    if "grid_step_deg" in m:
        kw["grid"] = angle_grid(-90, 90, m["grid_step_deg"])
    return kw


def build_solver(doc, seed=None) -> abf.CpslOptions:
    s = dict(doc.get("solver", {}))
    if seed is not None:
        s["seed"] = seed
    return _wrap("solver", abf.CpslOptions, **s)


def build_si(doc, base: Path, cfg: ArrayConfig, wf: WaveformConfig, null_idx, seed=None):
    """Dense true SI channel and its estimate at ``null_idx``."""
    s = doc.get("si", {})
    if "file" in s:
        path = Path(s["file"])
        path = path if path.is_absolute() else base / path
        true = load_si_channel(path, wf.n_subcarriers)
        if true.shape != (cfg.l_rx, cfg.l_tx):
            raise ConfigError(f"si.file holds {true.shape} matrices, expected {(cfg.l_rx, cfg.l_tx)}", key="si.file")
    else:
        true = synth_si_channel(cfg, wf, s.get("isolation_db", DEFAULT_ISOLATION_DB))
    err = _wrap("si", SiErrorConfig, s.get("epsilon", 0.0), s.get("seed", 0) if seed is None else seed)
    est = perturb_estimate(true, err, null_idx) if len(null_idx) else None
    return true, est


# ---------------------------------------------------------------- output


class Output:
    """Writes files inside one directory and records their digests."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if p.parent != self.root:
            raise ConfigError(f"refusing to write outside the output directory: {name}", key="output_dir")
        self.files.append(name)
        return p

    def json(self, name, doc) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
            fh.write("\n")

    def manifest(self, command, args: dict, doc, seeds: dict) -> None:
        digests = {}
        for name in sorted(set(self.files)):
            digests[name] = hashlib.sha256((self.root / name).read_bytes()).hexdigest()
        self.json(
            "manifest.json",
            {
                "tool": "fdjcas",
                "version": __version__,
                "command": command,
                "args": args,
                "scenario": doc,
                "config_hash": config_hash(doc),
                "seeds": seeds,
                "files": digests,
            },
        )


def _finite(x):
    """JSON-safe float (None for NaN/inf)."""
    x = float(x)
    return x if math.isfinite(x) else None


def _out_dir(args, doc) -> Path:
    if args.out:
        return Path(args.out)
    return Path(doc.get("output_dir", "out"))


# ---------------------------------------------------------------- commands


def _patterns_hbf(doc, base, out: Output, args):
    wf = build_waveform(doc)
    cfg = build_array(doc, wf)
    nsp = build_nsp(doc)
    scn = build_hbf(doc, wf, cfg, nsp)
    nulls = _wrap("nsp", nsp.resolve_subcarriers, wf)
    si_true, si_est = build_si(doc, base, cfg, wf, nulls, args.seed)
    weights, tx = hbf.design(scn, si_est)
    grid = angle_grid()
    for u, p in enumerate(hbf.tx_patterns(scn, weights, grid)):
        p.to_csv(out.path(f"tx_pattern_u{u + 1}.csv"))
    for l, p in enumerate(hbf.rx_patterns(scn, weights, grid)):
        p.to_csv(out.path(f"rx_pattern_l{l + 1}.csv"))
    weights.to_csv(out.path("weights.csv"))
    supp = average_si_suppression(si_true, weights.tx_effective(), weights.rx_matrix())
    out.json(
        "summary.json",
        {
            "mode": "hbf",
            "radar_gain_db": tx.radar_gain_db,
            "radar_gains_per_user_db": [float(v) for v in tx.radar_gains_per_user_db],
            "comm_gains_db": [float(v) for v in tx.comm_gains_db],
            "rf_assignment": list(tx.assignment),
            "null_subcarriers": [int(n) for n in nulls],
            "si_suppression_db": [[float(v) for v in row] for row in supp],
            "audit": hbf.audit(scn, weights, si_est),
        },
    )


def _patterns_abf(doc, base, out: Output, args):
    wf = build_waveform(doc)
    cfg = build_array(doc, wf)
    nsp = build_nsp(doc)
    configs = [c for c in doc.get("configs", ABF_CONFIGS) if c != "HBF"]
    scn0 = build_abf(doc, wf, cfg, nsp)
    nulls = _wrap("nsp", nsp.resolve_subcarriers, wf)
    si_true, si_est = build_si(doc, base, cfg, wf, nulls, args.seed)
    w_tx = abf.cf_tx_weights(scn0)
    lam = scn0.wavelength
    grid = angle_grid()
    mask_kw = build_mask_kwargs(doc)
    mask = _wrap("mask", abf.CrpMask, scn0.theta_rad_deg, **mask_kw)
    summary = {"mode": "abf", "null_subcarriers": [int(n) for n in nulls], "configs": {}}
    tx_written = False
    for c in configs:
        scn = build_abf(doc, wf, cfg, nsp, c)
        info = {}
        if c == "CPSL":
            res = abf.cpsl_optimize(scn, w_tx, si_est, mask, build_solver(doc, args.seed))
            w_rx = res.w_rx
            info.update(objective=res.objective, converged=res.converged, iterations=len(res.history) - 1, best_restart=res.best_restart)
        else:
            w_rx = abf.cf_rx_weights(scn, w_tx, si_est)
        g_tx, g_rx, crp = abf_gains(cfg, w_tx, w_rx, lam, grid)
        if not tx_written:
            g_tx.to_csv(out.path("tx_pattern.csv"))
            tx_written = True
        g_rx.to_csv(out.path(f"rx_pattern_{c}.csv"))
        crp.to_csv(out.path(f"crp_{c}.csv"))
        si_db = float(to_db(beamformed_si(si_true, w_tx, w_rx).mean(), -300))
        info.update(
            cpsl_db=abf.measure_cpsl(crp, scn.theta_rad_deg, mask.delta_deg),
            crp_radar_db=float(abf.crp_db(cfg, w_tx, w_rx, lam, scn.theta_rad_deg)),
            rx_at_comm_db=[float(to_db(abs(np.vdot(w_rx, steering_vector(cfg, "rx", lam, t))) ** 2)) for t in scn.theta_comm_deg],
            si_suppression_db=si_db,
        )
        summary["configs"][c] = info
    out.json("summary.json", summary)


def cmd_patterns(args) -> int:
    doc, base = load_scenario(args.scenario)
    out = Output(_out_dir(args, doc))
    if doc["mode"] == "hbf":
        _patterns_hbf(doc, base, out, args)
    else:
        _patterns_abf(doc, base, out, args)
    out.manifest("patterns", {"seed": args.seed}, doc, {"seed": args.seed, "si_seed": doc.get("si", {}).get("seed", 0)})
    return EXIT_OK


def parse_values(name: str, text: str) -> list:
    """``"0,1,2"`` lists or ``"a..b[:step]"`` ranges.

    Epsilon ranges are logarithmic with ``step`` points per decade (default
    1); other ranges are linear (default step 3 for mu, 1 otherwise).
    """
    try:
        if ".." not in text:
            vals = [float(v) for v in text.split(",") if v.strip()]
        else:
            span, _, step = text.partition(":")
            lo, hi = (float(v) for v in span.split(".."))
            if name == "epsilon":
                per = float(step) if step else 1.0
                if lo <= 0 or hi <= 0:
                    raise ValueError("epsilon ranges need positive endpoints")
                k = np.arange(0, round((math.log10(hi) - math.log10(lo)) * per) + 1)
                vals = [float(10 ** (math.log10(lo) + i / per)) for i in k]
            else:
                st = float(step) if step else (3.0 if name == "mu" else 1.0)
                vals = [float(v) for v in np.arange(lo, hi + st / 2, st)]
    except ValueError as exc:
        raise ConfigError(f"--sweep {name}: cannot parse {text!r} ({exc})", key="--sweep") from exc
    if not vals:
        raise ConfigError(f"--sweep {name}: no values", key="--sweep")
    return vals


def cmd_sweep(args) -> int:
    doc, base = load_scenario(args.scenario)
    name, sep, text = args.sweep.partition("=")
    if not sep or name not in ("nfreq", "epsilon", "mu"):
        raise ConfigError("--sweep expects nfreq=..., epsilon=... or mu=...", key="--sweep")
    values = parse_values(name, text)
    wf = build_waveform(doc)
    nsp = build_nsp(doc)
    out = Output(_out_dir(args, doc))
    seed = doc.get("si", {}).get("seed", 0) if args.seed is None else args.seed
    if name == "mu":
        if doc["mode"] != "hbf":
            raise ConfigError("mu sweeps need mode 'hbf'", key="mode")
        cfg = build_array(doc, wf)
        lrf = [int(v) for v in args.lrf.split(",")] if args.lrf else [cfg.l_rf_tx]
        scn = build_hbf(doc, wf, cfg, nsp, mu=[values[0]] * len(doc["beams"]["theta_comm"]))
        res = sweep_mu(scn, values, lrf)
    else:
        if doc["mode"] != "abf":
            raise ConfigError(f"{name} sweeps need mode 'abf'", key="mode")
        cfg = build_array(doc, wf)
        scn = build_abf(doc, wf, cfg, nsp)
        if name == "nfreq":
            nf = [int(v) for v in values]
            if any(v != int(v) or v < 0 for v in values):
                raise ConfigError("nfreq values must be nonnegative integers", key="--sweep")
            si_true, _ = build_si(doc, base, cfg, wf, [], seed)
            eps = doc.get("si", {}).get("epsilon", 0.0)
            est = None
            if eps > 0:
                union = np.unique(np.concatenate([_wrap("nsp", NspConfig(k).resolve_subcarriers, wf) for k in nf if k] or [np.zeros(0, int)]))
                est = perturb_estimate(si_true, SiErrorConfig(eps, seed), union)
            res = sweep_nfreq(scn, si_true, nf, est)
        else:
            si_true, _ = build_si(doc, base, cfg, wf, [], seed)
            nf = [int(v) for v in args.nfreq.split(",")]
            res = sweep_epsilon(scn, si_true, values, nf, args.trials, seed)
    res.provenance = {"scenario": doc, "sweep": args.sweep, "trials": args.trials, "lrf": args.lrf, "nfreq": args.nfreq, "seed": seed}
    res.to_csv(out.path(f"sweep_{name}.csv"))
    res.to_json(out.path(f"sweep_{name}.json"))
    out.manifest(
        "sweep",
        {"sweep": args.sweep, "trials": args.trials, "lrf": args.lrf, "nfreq": args.nfreq, "seed": args.seed},
        doc,
        {"seed": seed},
    )
    return EXIT_OK


def _scan_settings(doc, seed) -> ScanSettings:
    s = doc.get("scan", {})
    start, stop, step = s.get("start_deg", -60.0), s.get("stop_deg", 60.0), s.get("step_deg", 1.0)
    if stop < start:
        raise ConfigError("scan.stop_deg must not be below scan.start_deg", key="scan.stop_deg")
    angles = tuple(float(a) for a in angle_grid(start, stop, step))
    return _wrap(
        "scan",
        ScanSettings,
        angles_deg=angles,
        window=s.get("window", "hamming"),
        fft_size=s.get("fft_size"),
        max_range_m=s.get("max_range_m", 60.0),
        seed=s.get("seed", 0) if seed is None else seed,
        noise=s.get("noise", True),
    )


def cmd_sense(args) -> int:
    doc, base = load_scenario(args.scenario)
    wf = build_waveform(doc)
    nsp = build_nsp(doc)
    settings = _scan_settings(doc, args.seed)
    guard = doc.get("scan", {}).get("null_guard_deg", 7.0)
    threshold = doc.get("scan", {}).get("threshold_db", -30.0)
    targets = [_wrap("targets", TargetSpec, t["theta_deg"], t["range_m"], t.get("rcs_m2", 1.0)) for t in doc.get("targets", [])]
    if doc["mode"] == "hbf":
        configs = ["HBF"]
    else:
        default = list(ABF_CONFIGS) + (["HBF"] if "hbf" in doc else [])
        configs = doc.get("configs", default)
    cfg = build_array(doc, wf, *((1, 1) if doc["mode"] == "abf" else (None, None)))
    nulls = _wrap("nsp", nsp.resolve_subcarriers, wf)
    si_true, si_est = build_si(doc, base, cfg, wf, nulls, args.seed)
    out = Output(_out_dir(args, doc))
    scores = {}
    b = doc["beams"]
    for c in configs:
        if c == "HBF":
            h = doc.get("hbf", {})
            hcfg = build_array(doc, wf, h.get("l_rf_tx"), h.get("l_rf_rx")) if doc["mode"] == "abf" else cfg
            mu = h.get("mu_db", b.get("mu_db"))
            # validates the hybrid settings once up front
            build_hbf(doc, wf, hcfg, nsp, mu=mu, rf_assignment=h.get("rf_assignment"))
            designer = HbfDesigner(
                hcfg, wf, tuple(b["theta_comm"]), _mu(mu), nsp, si_est,
                tuple(b["stream_powers"]) if "stream_powers" in b else None,
                h.get("rf_assignment", b.get("rf_assignment", "search")), guard,
            )
            arr = hcfg
        else:
            rho_rad, rho_comm = _rho(doc)
            build_abf(doc, wf, cfg, nsp, c)
            mask_kw = build_mask_kwargs(doc)
            designer = AbfDesigner(
                cfg, wf, tuple(b["theta_comm"]), rho_rad, rho_comm, nsp, c, si_est, mask_kw, build_solver(doc, args.seed), guard
            )
            arr = cfg
        meta = {"config": c, "scenario_hash": config_hash(doc)}
        img = scan(arr, wf, designer, targets, si_true, settings, meta)
        img.to_csv(out.path(f"image_{c}.csv"))
        out.json(f"image_{c}.json", img.metadata)
        score = score_detections(img, targets, threshold_db=threshold) if targets else None
        near = img.magnitude_db[:, img.range_bins_m < 1.0]
        entry = {"near_range_peak_db": _finite(near.max()) if near.size else None}
        if targets:
            entry.update(score.as_dict())
            cells = [_target_cell(img, t) for t in targets]
            entry["strongest_target_db"] = _finite(max(cells))
            if near.size:
                entry["si_over_targets_db"] = _finite(near.max() - max(cells))
        scores[c] = entry
    out.json("detections.json", {"targets": [t.__dict__ for t in targets], "configs": scores})
    out.manifest("sense", {"seed": args.seed}, doc, {"scan_seed": settings.seed, "si_seed": doc.get("si", {}).get("seed", 0)})
    return EXIT_OK


def _target_cell(img, t) -> float:
    """Largest image value within one angle step and one range bin of ``t``."""
    ai = int(np.argmin(np.abs(img.angles_deg - t.theta_deg)))
    ri = int(np.argmin(np.abs(img.range_bins_m - t.range_m)))
    return float(img.magnitude_db[max(ai - 1, 0) : ai + 2, max(ri - 1, 0) : ri + 2].max())


def cmd_validate(args) -> int:
    doc, _ = load_scenario(args.scenario)
    wf = build_waveform(doc)
    build_array(doc, wf)
    nsp = build_nsp(doc)
    _wrap("nsp", nsp.resolve_subcarriers, wf)
    print(f"{args.scenario}: ok")
    return EXIT_OK


def cmd_replay(args) -> int:
    """Re-run the command recorded in a manifest."""
    with open(args.manifest) as fh:
        man = json.load(fh)
    try:
        command, rec_args, doc = man["command"], man["args"], man["scenario"]
    except (KeyError, TypeError) as exc:
        raise ConfigError("not a manifest file", key="manifest") from exc
    out = args.out or str(Path(args.manifest).resolve().parent)
    tmp = Path(out) / ".scenario.json"
    Path(out).mkdir(parents=True, exist_ok=True)
    tmp.write_text(json.dumps(doc))
    try:
        argv = [command, str(tmp), "--out", out]
        for k, v in rec_args.items():
            if v is not None:
                argv += [f"--{k}", str(v)]
        return main(argv)
    finally:
        tmp.unlink(missing_ok=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdjcas", description="Full-duplex JCAS beamformer design and radar simulation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="override every seed in the scenario")

    sp = sub.add_parser("patterns", help="design beams and write gain patterns")
    common(sp)
    sp.set_defaults(func=cmd_patterns)
    sp = sub.add_parser("sweep", help="parameter sweeps")
    common(sp)
    sp.add_argument("--sweep", required=True, help="nfreq=0,1,2,4 | epsilon=1e-4..1e-1 | mu=0..15")
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--lrf", help="TX RF chain counts for mu sweeps, e.g. 4,8,32")
    sp.add_argument("--nfreq", default="1,2,4", help="frequency-null counts for epsilon sweeps")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("sense", help="range-angle radar images")
    common(sp)
    sp.set_defaults(func=cmd_sense)
    sp = sub.add_parser("validate", help="schema and consistency check only")
    sp.add_argument("scenario")
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest.json")
    sp.add_argument("manifest")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (Infeasible, FullRankNullspace) as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, LoadError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
