"""Command-line front end.

Verbs: ``bound``, ``validate``, ``sweep``, ``fit`` and ``genpn``.  Parameters
come from a built-in preset, a JSON config file and command-line flags, in
increasing order of precedence.  Every output file carries the resolved
configuration: JSON files under a ``config`` key, CSV files as a first line
``# config: {...}``.

Exit codes: 0 success, 1 a validation run exceeded its tolerance, 2 invalid
input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bounds, spectrum
from .spectrum import OscillatorProfile
from .statistics import DEFAULT_INIT_VAR, QuadratureError, SingularCovarianceError
from .simulate import psd as psd_mod
from .simulate.estimator import ConvergenceError
from .simulate.generator import generate_pn
from .simulate.link import run_link

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

AXES = ("snr_db", "k0_dbc", "corner_freq", "gamma", "symbol_rate")

_FIG5 = {"k3": 1e4, "k2": 10.0, "k0": 1e-11, "gamma": 1.0}
_FIG11 = {"k3": 5e3, "k2": 0.06, "k0": 10 ** -14.767, "gamma": 1.0}
_FIG12 = {"k3": 4.2e4, "k2": 0.0, "k0": 10 ** -15.383, "gamma": 1.0}

PRESETS: dict[str, dict] = {
    "fig5": {
        "command": "genpn",
        "profile": _FIG5,
        "symbol_rate": 1e6,
        "length": 2**18,
        "realizations": 100,
        "segment_len": 2**16,
        "convention": "one_sided",
        "trace_samples": 4096,
    },
    "fig6": {
        "command": "validate",
        "profile": _FIG5,
        "link": {"symbol_rate": 1e6, "block_len": 200, "pilot_fraction": 0.1},
        "trials": 500,
        "rel_tol": 0.10,
        "max_failure_rate": 0.01,
        "cases": [
            {"label": "QAM16", "constellation": "QAM16",
             "snr_db": [15, 20, 25, 30], "check_min_snr_db": 20},
            {"label": "QAM64", "constellation": "QAM64",
             "snr_db": [20, 25, 30], "check_min_snr_db": 25},
            {"label": "zero_pn", "constellation": "QAM16", "snr_db": [30],
             "profile": {"k3": 0.0, "k2": 0.0, "k0": 1e-30}, "reference": "awgn",
             "check_min_snr_db": 20},
        ],
    },
    "fig9": {
        "command": "sweep",
        "axis": {"name": "corner_freq", "start": 1.0, "stop": 1e8, "num": 33, "scale": "log"},
        "series": [
            {"label": "system_a", "profile": {"k3": 0.0, "k2": 0.1, "k0": 1e-16},
             "link": {"symbol_rate": 1e5, "snr_db": 30, "block_len": 10}},
            {"label": "system_b", "profile": {"k3": 0.0, "k2": 0.1, "k0": 1e-16},
             "link": {"symbol_rate": 5e6, "snr_db": 30, "block_len": 10}},
        ],
    },
    "fig10": {
        "command": "sweep",
        "axis": {"name": "k0_dbc", "start": -160, "stop": -100, "num": 13, "scale": "linear"},
        "series": [
            {"label": "system_a", "profile": {"k3": 1e4, "k2": 1.0, "k0": 1e-16},
             "link": {"symbol_rate": 1e5, "snr_db": 30, "block_len": 10}},
            {"label": "system_b", "profile": {"k3": 1e4, "k2": 1.0, "k0": 1e-16},
             "link": {"symbol_rate": 5e6, "snr_db": 30, "block_len": 10}},
        ],
    },
    "fig13": {
        "command": "sweep",
        "axis": {"name": "symbol_rate", "start": 1e4, "stop": 1e8, "num": 41, "scale": "log"},
        "series": [
            {"label": "low_flicker", "profile": _FIG11,
             "link": {"symbol_rate": 1e6, "snr_db": 30, "block_len": 10}},
            {"label": "high_flicker", "profile": _FIG12,
             "link": {"symbol_rate": 1e6, "snr_db": 30, "block_len": 10}},
        ],
    },
    "fig14": {
        "command": "bound",
        "profiles": {
            "pure_f2": {"k3": 0.0, "k2": 0.06, "k0": 1e-20},
            "pure_f3": {"k3": 8e3, "k2": 0.0, "k0": 1e-20},
        },
        "link": {"symbol_rate": 3.84e6, "snr_db": 30, "block_len": 10},
    },
    "gamma_sweep": {
        "command": "sweep",
        "axis": {"name": "gamma", "start": 1.0, "stop": 1e4, "num": 13, "scale": "log"},
        "series": [
            {"label": "fig5_profile", "profile": _FIG5,
             "link": {"symbol_rate": 1e6, "snr_db": 30, "block_len": 10}},
        ],
    },
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Config handling
# --------------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(command: str, preset: str | None = None, path: str | None = None,
                overrides: dict | None = None) -> dict:
    """Resolve preset, then config file, then flag overrides."""
    cfg: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = copy.deepcopy(PRESETS[preset])
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                cfg = _merge(cfg, json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    cfg = _merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})
    if cfg.setdefault("command", command) != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
    return cfg


def _profile(d) -> OscillatorProfile:
    """A profile from an inline dict, a profile JSON path, or a measurement to fit.

    The last form is ``{"measurement": "<csv>", "gamma": g}``.
    """
    if isinstance(d, str):
        return spectrum.read_profile_json(d)
    if not isinstance(d, dict):
        raise ConfigError("profile must be a JSON object or a path")
    if "measurement" in d:
        meas = spectrum.read_measurement_csv(d["measurement"])
        return spectrum.fit_profile(meas, gamma=float(d.get("gamma", 1.0)),
                                    max_rms_db=float(d.get("max_rms_db", 3.0))).profile
    return OscillatorProfile.from_dict(d)


def _link(d: dict, **extra) -> bounds.LinkConfig:
    d = _merge(d, {k: v for k, v in extra.items() if v is not None})
    for key in ("symbol_rate", "snr_db", "block_len"):
        if key not in d:
            raise ConfigError(f"link needs {key!r}")
    return bounds.LinkConfig.from_dict(d)


def _link_overrides(cfg: dict) -> dict:
    return {k: cfg.get(k) for k in ("symbol_rate", "snr_db", "block_len", "pilot_fraction",
                                    "constellation")}


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: np.ndarray

    @classmethod
    def from_dict(cls, d: dict) -> "SweepAxis":
        name = d.get("name")
        if name not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}, got {name!r}")
        if "values" in d:
            values = np.asarray(d["values"], dtype=float)
        else:
            start, stop, num = float(d["start"]), float(d["stop"]), int(d["num"])
            if d.get("scale", "linear") == "log":
                if start <= 0 or stop <= 0:
                    raise ConfigError("log-scaled axis needs positive bounds")
                values = np.geomspace(start, stop, num)
            else:
                values = np.linspace(start, stop, num)
        if values.size == 0:
            raise ConfigError("sweep axis is empty")
        if values.size > 1 and not np.all(np.diff(values) > 0):
            raise ConfigError("sweep axis values must be strictly increasing")
        return cls(name, values)


def _apply_axis(name: str, value: float, profile: OscillatorProfile,
                link: bounds.LinkConfig) -> tuple[OscillatorProfile, bounds.LinkConfig]:
    p, lk = profile.to_dict(), link.to_dict()
    if name == "snr_db":
        lk["snr_db"] = value
    elif name == "k0_dbc":
        p["k0"] = spectrum.dbc_to_linear(value)
    elif name == "corner_freq":
        # corner = K3/K2 with K2 held fixed
        if p["k2"] <= 0:
            raise ConfigError("corner_freq axis needs k2 > 0")
        p["k3"] = value * p["k2"]
    elif name == "gamma":
        p["gamma"] = value
    elif name == "symbol_rate":
        lk["symbol_rate"] = value
    return OscillatorProfile.from_dict(p), bounds.LinkConfig.from_dict(lk)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _echo(cfg: dict) -> str:
    return json.dumps(cfg, default=_json_default, sort_keys=True)


def write_csv(path: Path, header: list[str], rows, cfg: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config: {_echo(cfg)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                        for x in row])


def write_json(path: Path, payload: dict, cfg: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"config": cfg, **payload}, fh, indent=2, default=_json_default)
        fh.write("\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV written by this tool, skipping the config line."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    return rows[0], rows[1:]


def _outdir(cfg: dict) -> Path:
    out = Path(cfg.get("out") or "pnevm_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map(fn, items, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_bound(cfg: dict) -> int:
    if "profiles" in cfg:
        profiles = {str(k): _profile(v) for k, v in cfg["profiles"].items()}
    elif "profile" in cfg:
        profiles = {"profile": _profile(cfg["profile"])}
    else:
        raise ConfigError("bound needs 'profile' or 'profiles'")
    link = _link(cfg.get("link", {}), **_link_overrides(cfg))
    iv3 = float(cfg.get("init_var_phi3", DEFAULT_INIT_VAR))
    iv2 = float(cfg.get("init_var_phi2", DEFAULT_INIT_VAR))
    out = _outdir(cfg)
    reports = {}
    for label, prof in profiles.items():
        rep = bounds.evm_bound(prof, link, iv3, iv2)
        reports[label] = rep
        write_json(out / f"bound_{label}.json", {
            "label": label,
            "resolved_profile": prof.to_dict(),
            "sigma2_eps": rep.sigma2_eps, "evm": rep.evm,
            "evm_avg": rep.evm_avg, "evm_avg_db": rep.evm_avg_db,
        }, cfg)
        write_csv(out / f"bound_{label}.csv", ["n", "sigma2_eps", "evm"],
                  ((n, s, e) for n, (s, e) in enumerate(zip(rep.sigma2_eps, rep.evm), 1)), cfg)
        print(f"{label}: evm_avg={rep.evm_avg:.6g} evm_avg_db={rep.evm_avg_db:.3f}")
    if len(reports) == 2:
        (la, a), (lb, b) = reports.items()
        gap = bounds.evm_gap_db(a, b)
        write_json(out / "bound_gap.json", {"a": la, "b": lb, "gap_db": gap}, cfg)
        print(f"gap {la} vs {lb}: {gap:.3f} dB")
    return EXIT_OK


def cmd_validate(cfg: dict) -> int:
    trials = int(cfg.get("trials", 500))
    if trials < 100:
        raise ConfigError("validate needs trials >= 100")
    seed = int(cfg.get("seed", 0))
    workers = int(cfg.get("workers", 1))
    rel_tol = float(cfg.get("rel_tol", 0.10))
    max_fail = float(cfg.get("max_failure_rate", 0.01))
    base_profile = cfg.get("profile")
    base_link = _merge(cfg.get("link", {}), {k: v for k, v in _link_overrides(cfg).items()
                                              if v is not None and k != "snr_db"})
    cases = cfg.get("cases") or [{"label": "run",
                                  "snr_db": cfg.get("snr_db_list", [base_link.get("snr_db", 25)])}]
    out = _outdir(cfg)
    status = EXIT_OK
    for case in cases:
        label = str(case.get("label", "case"))
        prof = _profile(case.get("profile", base_profile))
        reference = case.get("reference", "bound")
        check_from = float(case.get("check_min_snr_db", 20.0))
        rows = []
        for snr_db in case["snr_db"]:
            lk = _link(base_link, snr_db=float(snr_db),
                       constellation=case.get("constellation"))
            sim = run_link(prof, lk, trials, seed=seed, workers=workers)
            if reference == "awgn":
                # no phase noise: only the additive noise remains
                ref, mc = 1.0 / math.sqrt(lk.snr), sim.evm_with_noise
            else:
                ref, mc = bounds.evm_bound(prof, lk).evm_avg, sim.evm_empirical
            rel = mc / ref - 1.0
            rows.append((float(snr_db), ref, mc, rel))
            flag = ""
            if sim.failure_rate > max_fail:
                flag = " estimator failure rate exceeded"
                status = EXIT_NUMERIC
            elif float(snr_db) >= check_from and abs(rel) > rel_tol:
                flag = " out of tolerance"
                status = max(status, EXIT_TOLERANCE)
            print(f"{label} snr={snr_db} dB: ref={ref:.5g} mc={mc:.5g} "
                  f"rel_err={rel:+.4f} se={sim.evm_stderr:.2g} "
                  f"failed={sim.failed_trials}/{trials}{flag}")
        write_csv(out / f"validate_{label}.csv", ["snr_db", "evm_bound", "evm_mc", "rel_err"],
                  rows, {**cfg, "case": case})
    return status


def _sweep_point(args):
    name, v, prof, link, iv3, iv2 = args
    p, lk = _apply_axis(name, v, prof, link)
    return bounds.evm_bound(p, lk, iv3, iv2).evm_avg


def cmd_sweep(cfg: dict) -> int:
    if "axis" not in cfg:
        raise ConfigError("sweep needs exactly one 'axis'")
    axis = SweepAxis.from_dict(cfg["axis"])
    series = cfg.get("series")
    if not series:
        raise ConfigError("sweep needs at least one entry in 'series'")
    iv3 = float(cfg.get("init_var_phi3", DEFAULT_INIT_VAR))
    iv2 = float(cfg.get("init_var_phi2", DEFAULT_INIT_VAR))
    workers = int(cfg.get("workers", 1))
    out = _outdir(cfg)
    for s in series:
        label = str(s["label"])
        prof = _profile(s["profile"])
        link = _link(s.get("link", {}), **_link_overrides(cfg))
        evm = _map(_sweep_point, [(axis.name, float(v), prof, link, iv3, iv2)
                                  for v in axis.values], workers)
        write_csv(out / f"sweep_{label}.csv", ["axis_value", "evm_avg"],
                  zip(axis.values.tolist(), evm), {**cfg, "series_label": label})
        print(f"{label}: {axis.name} {axis.values[0]:.4g}..{axis.values[-1]:.4g}, "
              f"evm_avg {min(evm):.4g}..{max(evm):.4g}")
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    path = cfg.get("measurement")
    if not path:
        raise ConfigError("fit needs a measurement CSV")
    meas = spectrum.read_measurement_csv(path)
    res = spectrum.fit_profile(meas, gamma=float(cfg.get("gamma", 1.0)),
                               max_rms_db=float(cfg.get("max_rms_db", 3.0)))
    out = _outdir(cfg)
    write_json(out / "profile.json", {"profile": res.profile.to_dict(), "rms_db": res.rms_db}, cfg)
    p = res.profile
    print(f"k3={p.k3:.6g} k2={p.k2:.6g} k0={p.k0:.6g} gamma={p.gamma:g} "
          f"rms={res.rms_db:.3f} dB")
    return EXIT_OK


def cmd_genpn(cfg: dict) -> int:
    prof = _profile(cfg.get("profile"))
    rate = float(cfg.get("symbol_rate", 1e6))
    if rate <= 0:
        raise ConfigError("symbol_rate must be > 0")
    T = 1.0 / rate
    length = int(cfg.get("length", 2**18))
    reps = int(cfg.get("realizations", 1))
    seg = int(cfg.get("segment_len", min(length // 2, 2**16)))
    convention = cfg.get("convention", "one_sided")
    seed = int(cfg.get("seed", 0))
    if reps < 1:
        raise ConfigError("realizations must be >= 1")
    acc = None
    first = None
    for r in range(reps):
        tr = generate_pn(prof, T, length, np.random.default_rng([seed, r]), convention)
        if first is None:
            first = tr.phi
        f, p = psd_mod.psd_estimate(tr.phi, T, seg)
        acc = p if acc is None else acc + p
    psd = acc / reps
    out = _outdir(cfg)
    keep = int(cfg.get("trace_samples", length))
    write_csv(out / "genpn_trace.csv", ["n", "phi"],
              ((n, float(x)) for n, x in enumerate(first[:keep])), cfg)
    # one-sided estimates are twice the level of the dBc/Hz model
    f1, p1 = f[1:], psd[1:]
    analytic = psd_mod.sampled_psd(prof, T, f1)
    write_csv(out / "genpn_psd.csv", ["f_hz", "psd_dbc", "analytic_dbc", "model_dbc"],
              zip(f1, 10 * np.log10(p1 / 2), 10 * np.log10(analytic / 2),
                  spectrum.linear_to_dbc(spectrum.total_psd(prof, f1))), cfg)
    print(f"{reps} realisation(s) of {length} samples; PSD on {f1.size} bins")
    return EXIT_OK


COMMANDS = {"bound": cmd_bound, "validate": cmd_validate, "sweep": cmd_sweep,
            "fit": cmd_fit, "genpn": cmd_genpn}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pnevm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default ./pnevm_out)")
        if name in ("bound", "validate", "sweep"):
            p.add_argument("--snr-db", type=float, dest="snr_db")
            p.add_argument("--block-len", type=int, dest="block_len")
            p.add_argument("--symbol-rate", type=float, dest="symbol_rate")
            p.add_argument("--constellation")
            p.add_argument("--pilot-fraction", type=float, dest="pilot_fraction")
        if name in ("validate", "sweep"):
            p.add_argument("--workers", type=int)
        if name == "validate":
            p.add_argument("--trials", type=int)
        if name == "fit":
            p.add_argument("measurement", nargs="?", help="SSB measurement CSV")
            p.add_argument("--gamma", type=float)
        if name == "genpn":
            p.add_argument("--length", type=int)
            p.add_argument("--realizations", type=int)
            p.add_argument("--segment-len", type=int, dest="segment_len")
            p.add_argument("--symbol-rate", type=float, dest="symbol_rate")
            p.add_argument("--convention", choices=["one_sided", "two_sided_paper_table"])
    return ap


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    preset, path = args.pop("preset"), args.pop("config")
    try:
        cfg = load_config(command, preset, path, args)
        return COMMANDS[command](cfg)
    except (SingularCovarianceError, spectrum.FitFailureError, QuadratureError,
            ConvergenceError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
