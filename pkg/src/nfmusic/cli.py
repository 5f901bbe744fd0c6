"""Command-line front end.

Subcommands: ``spectrum`` (one simulated run, spectra and estimates per mode),
``sweep`` (Monte Carlo RMSE versus SNR), ``validate`` (invariant checks) and
``gain`` (per-subcarrier array-gain scan).

Exit codes: 0 success, 1 runtime failure, 2 configuration error (including a
missing file), 3 identifiability violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .array_model import (
    ArrayConfig,
    element_range_exact,
    element_range_fresnel,
    farfield_steering,
    fraunhofer_distance,
    nearfield_steering,
    spatial_steering,
    squint_map,
)
from .errors import ConfigurationError, IdentifiabilityError
from .estimator import (
    ALL_MODES,
    check_identifiability,
    combined_spectrum,
    find_peaks,
    parse_mode,
    squint_transform,
    subspaces_for,
)
from .subspace import eigendecompose

log = logging.getLogger("nfmusic")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_IDENTIFIABILITY = 0, 1, 2, 3


class UsageError(ConfigurationError):
    pass


def parse_snr(text: str) -> list[float]:
    """``start:step:stop`` (inclusive, in dB) or a single value such as ``20`` or ``inf``."""
    parts = text.split(":")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"bad SNR specification {text!r}") from None
    if len(values) == 1:
        return values
    if len(values) != 3:
        raise UsageError(f"SNR range must be start:step:stop, got {text!r}")
    start, step, stop = values
    if not all(map(math.isfinite, values)):
        raise UsageError("SNR range bounds must be finite")
    if step == 0 or (stop - start) * step < 0:
        raise UsageError(f"SNR step {step} does not reach {stop} from {start}")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [start + i * step for i in range(n + 1)]


def parse_modes(values) -> list:
    if not values:
        return list(ALL_MODES)
    out = []
    for v in values:
        for name in v.split(","):
            if name.strip().lower() == "all":
                return list(ALL_MODES)
            try:
                mode = parse_mode(name)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            if mode not in out:
                out.append(mode)
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(bench.PRESETS), default=None,
                   help="built-in scenario (default: desk)")
    p.add_argument("--scenario", help="YAML/JSON scenario file or a previous manifest.json")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-step-u", type=float)
    p.add_argument("--grid-step-r", type=float)
    p.add_argument("--bandwidth", type=float, help="Hz")
    p.add_argument("--subcarriers", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any scenario field (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfmusic", description="Wideband near-field MUSIC with beam-squint correction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="single run: spectra and peak estimates")
    _common(p)
    p.add_argument("--mode", action="append", help="estimator mode, comma list or 'all'")
    p.add_argument("--snr", default=None, help="SNR in dB (single value, 'inf' = noiseless)")
    p.add_argument("--trial-index", type=int, default=None)

    p = sub.add_parser("sweep", help="Monte Carlo RMSE versus SNR")
    _common(p)
    p.add_argument("--mode", action="append")
    p.add_argument("--snr", default=None, help="start:step:stop in dB")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("validate", help="run the invariant checks")
    _common(p)

    p = sub.add_parser("gain", help="per-subcarrier array-gain scan")
    _common(p)
    p.add_argument("--u0", type=float, default=math.sin(math.pi / 4))
    p.add_argument("--r0", type=float, default=10.0)
    return parser


def resolve_scenario(args) -> tuple[bench.Scenario, dict]:
    extra: dict = {}
    if args.scenario:
        if not os.path.exists(args.scenario):
            raise FileNotFoundError(args.scenario)
        scenario, extra = bench.load_scenario(args.scenario)
        if args.preset:
            log.warning("--preset ignored because --scenario was given")
    else:
        scenario = bench.preset(args.preset or "desk")
    changes = {}
    for flag, key in (("seed", "seed"), ("grid_step_u", "grid_step_u"),
                      ("grid_step_r", "grid_step_r"), ("bandwidth", "bandwidth"),
                      ("subcarriers", "n_subcarriers")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    if changes:
        scenario = bench.scenario_from_dict(changes, scenario)
    if args.set:
        scenario = bench.apply_overrides(scenario, args.set)
    return scenario, extra


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _sanitize(value):
    """JSON has no inf/nan; encode them as strings that float() reads back."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_sanitize(v) for v in value]
    return value


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_spectrum(args) -> int:
    scenario, extra = resolve_scenario(args)
    modes = parse_modes(args.mode) if args.mode else parse_modes(extra.get("modes"))
    snr_text = args.snr if args.snr is not None else str(extra.get("snr_db", "20"))
    snr = parse_snr(snr_text)
    if len(snr) != 1:
        raise UsageError("spectrum takes a single SNR value")
    snr = snr[0]
    trial_index = args.trial_index if args.trial_index is not None else int(extra.get("trial_index", 0))
    cfg = scenario.array_config()
    check_identifiability(cfg.n_antennas, scenario.n_targets, scenario.snapshots)
    out = _outdir(args)

    data = bench.simulate_trial(scenario, snr, trial_index)
    directions, ranges = scenario.search_grid()
    subspaces = subspaces_for(data.observations, scenario.n_targets)
    estimates = {}
    for mode in modes:
        spec = combined_spectrum(data.observations, data.bank, cfg, data.grid,
                                 scenario.n_targets, directions, ranges, mode,
                                 subspaces=subspaces)
        spec.to_csv(out / f"spectrum_{mode.value}.csv")
        est = find_peaks(spec, scenario.n_targets)
        estimates[mode.value] = {"degraded": est.degraded, "peaks": est.to_records()}
        for rec in est.to_records():
            r = "-" if rec["r"] is None else f"{rec['r']:.3f} m"
            print(f"{mode.value:10s} u = {rec['u']:+.4f}  r = {r}")
    truths = [{"u": t.direction, "r": t.range} for t in data.targets]
    _write_json(out / "estimates.json", {"truths": truths, "estimates": estimates})
    _write_json(out / "manifest.json", _sanitize(bench.manifest(
        scenario, "spectrum", modes=[m.value for m in modes], snr_db=snr,
        trial_index=trial_index)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario, extra = resolve_scenario(args)
    if args.trials is not None:
        if args.trials < 1:
            raise UsageError("--trials must be at least 1")
        scenario = scenario.replace(trials=args.trials)
    if args.snr is not None:
        scenario = scenario.replace(snr_db=parse_snr(args.snr))
    modes = parse_modes(args.mode) if args.mode else parse_modes(extra.get("modes"))
    cfg = scenario.array_config()
    check_identifiability(cfg.n_antennas, scenario.n_targets, scenario.snapshots)
    out = _outdir(args)
    curve = bench.snr_sweep(scenario, modes)
    curve.to_csv(out / "sweep.csv")
    _write_json(out / "manifest.json", _sanitize(bench.manifest(
        scenario, "sweep", modes=[m.value for m in modes])))
    print(curve.to_csv(), end="")
    return EXIT_OK


# -- validate ---------------------------------------------------------------

PASS, FAIL, DEGENERATE = "PASS", "FAIL", "PASS (degenerate)"


def _check_steering_norms(cfg, grid, rng):
    u = rng.uniform(-1, 1, 64)
    r = rng.uniform(0.5, fraunhofer_distance(cfg), 64)
    err = 0.0
    for ui, ri in zip(u, r):
        for f in grid.frequencies:
            err = max(err, abs(np.linalg.norm(nearfield_steering(ui, ri, f, cfg).entries) - 1),
                      abs(np.linalg.norm(farfield_steering(ui, f, cfg).entries) - 1))
    return (PASS if err < 1e-12 else FAIL), f"max | ||a|| - 1 | = {err:.1e}"


def _check_transform(cfg, grid, rng):
    if np.all(grid.ratios == 1.0):
        return DEGENERATE, "eta_m = 1 for every subcarrier, transform is the identity"
    err = 0.0
    d_f = fraunhofer_distance(cfg)
    for _ in range(200):
        u, r = rng.uniform(-0.95, 0.95), rng.uniform(0.5, d_f)
        m = int(rng.integers(1, grid.n_subcarriers + 1))
        tau = squint_transform(u, r, m, cfg, grid).tau
        a = nearfield_steering(u, r, cfg.carrier, cfg).entries
        b = spatial_steering(u, r, grid.ratios[m - 1], cfg).entries
        err = max(err, float(np.max(np.abs(tau * a - b))))
    return (PASS if err < 1e-12 else FAIL), f"max |T a(u,r) - a(u_bar,r_bar)| = {err:.1e}"


def _check_squint(cfg, grid):
    eta = grid.ratios
    if np.all(eta == 1.0):
        return DEGENERATE, "B = 0: eta_m = 1, no squint"
    u0 = math.sin(math.pi / 4)
    dev = np.array([squint_map(u0, 10.0, e).delta_direction for e in eta])
    err = float(np.max(np.abs(dev - (eta - 1) * u0)))
    return (PASS if err < 1e-12 else FAIL), (
        f"edge deviation {dev[-1]:+.5f} at {grid.frequencies[-1] / 1e9:g} GHz, "
        f"max |du - (eta-1)u| = {err:.1e}")


def _check_fresnel(cfg, rng):
    d_f = fraunhofer_distance(cfg)
    n = np.arange(1, cfg.n_antennas + 1)
    err = 0.0
    for _ in range(200):
        u, r = rng.uniform(-1, 1), rng.uniform(0.3 * d_f, 0.9 * d_f)
        err = max(err, float(np.max(np.abs(element_range_exact(u, r, n, cfg)
                                           - element_range_fresnel(u, r, n, cfg)))))
    bound = cfg.wavelength / 16
    return (PASS if err <= bound else FAIL), (
        f"max range error {err:.2e} m <= lambda/16 = {bound:.2e} m over [0.3, 0.9] d_F")


def _check_fraunhofer(cfg):
    ref = ArrayConfig(256, 300e9, speed_of_light=cfg.speed_of_light)
    d_f = fraunhofer_distance(ref)
    full = 2 * (ref.n_antennas * ref.spacing) ** 2 / ref.wavelength
    ok = abs(d_f - 32.51) <= 0.01
    return (PASS if ok else FAIL), (
        f"N=256 @ 300 GHz: {d_f:.3f} m with D=(N-1)d; {full:.3f} m with D=Nd "
        f"(the 32.76 m figure); this array: {fraunhofer_distance(cfg):.4f} m")


def _check_identifiability(scenario):
    try:
        check_identifiability(scenario.n_antennas, scenario.n_targets, scenario.snapshots)
    except IdentifiabilityError as exc:
        return FAIL, str(exc)
    return PASS, (f"N - K = {scenario.n_antennas - scenario.n_targets}, "
                  f"T = {scenario.snapshots} >= K = {scenario.n_targets}")


def _check_subspace(scenario, rng):
    N, K = scenario.n_antennas, scenario.n_targets
    if not 0 <= K < N:
        return FAIL, f"K = {K} leaves no noise subspace for N = {N}"
    err = 0.0
    for _ in range(10):
        X = rng.standard_normal((N, 2 * N)) + 1j * rng.standard_normal((N, 2 * N))
        pair = eigendecompose(X @ X.conj().T / (2 * N), K)
        err = max(err, float(np.max(np.abs(pair.signal_projector + pair.noise_projector
                                           - np.eye(N)))))
    return (PASS if err < 1e-8 else FAIL), f"max |P_S + P_N - I| = {err:.1e}"


def cmd_validate(args) -> int:
    scenario, _ = resolve_scenario(args)
    cfg = scenario.array_config()
    grid = scenario.wideband_grid()
    rng = np.random.default_rng(scenario.seed)
    checks = [
        ("steering norms", lambda: _check_steering_norms(cfg, grid, rng)),
        ("transform identity", lambda: _check_transform(cfg, grid, rng)),
        ("squint deviation", lambda: _check_squint(cfg, grid)),
        ("fresnel accuracy", lambda: _check_fresnel(cfg, rng)),
        ("fraunhofer distance", lambda: _check_fraunhofer(cfg)),
        ("identifiability", lambda: _check_identifiability(scenario)),
        ("subspace projectors", lambda: _check_subspace(scenario, rng)),
    ]
    failed = 0
    print(f"{'check':22s} {'status':18s} detail")
    for name, fn in checks:
        status, detail = fn()
        failed += status == FAIL
        print(f"{name:22s} {status:18s} {detail}")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_gain(args) -> int:
    scenario, _ = resolve_scenario(args)
    if not abs(args.u0) < 1:
        raise UsageError("--u0 must satisfy |u0| < 1")
    out = _outdir(args)
    scan = bench.array_gain_scan(args.u0, args.r0, scenario)
    scan.to_csv(out / "gain.csv")
    _write_json(out / "manifest.json", _sanitize(bench.manifest(
        scenario, "gain", u0=args.u0, r0=args.r0)))
    grid = scenario.wideband_grid()
    print(f"{'m':>3s} {'f_GHz':>9s} {'argmax_u':>9s} {'eta*u0':>9s}")
    for m, f, u, eta in zip(scan.subcarriers, scan.frequencies, scan.argmax_directions,
                            grid.ratios):
        print(f"{m:3d} {f / 1e9:9.3f} {u:9.4f} {eta * args.u0:9.4f}")
    return EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "sweep": cmd_sweep, "validate": cmd_validate,
            "gain": cmd_gain}


def _join_snr(argv: list[str]) -> list[str]:
    # argparse would read "--snr -10:5:30" as two options
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--snr" and i + 1 < len(argv):
            out.append(f"--snr={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_snr(list(sys.argv[1:] if argv is None else argv)))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except IdentifiabilityError as exc:
        print(f"nfmusic: identifiability error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFIABILITY
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nfmusic: usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"nfmusic: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"nfmusic: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"nfmusic: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
