"""``kgsplit`` command-line front end.

Configuration comes from an optional JSON file (``--config``) with one table
per command plus a shared ``model`` table; flags override file values. High
precision inputs are decimal strings throughout. Outputs go to stdout, or
into ``--out DIR`` together with a ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import gmpy2

from kgsplit import __version__
from kgsplit.fourier import OddPowerSeries
from kgsplit.precision import PrecisionContext, decimal_string

EXIT_OK, EXIT_CONFIG, EXIT_PRECISION, EXIT_ACCEPTANCE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- config ------------------------------------------------------------------

DEFAULTS = {
    "splitting-scan": {"k": 1, "eps_min": "0.18", "eps_max": "0.40", "eps_steps": 6, "modes": 11,
                       "bits": "auto", "order": 40, "f_coeffs": [], "jobs": 1},
    "stokes-inner": {"r0": "12", "R": "20", "modes": 11, "bits": None, "f_coeffs": [], "mu": None},
    "melnikov": {"f_coeffs": [], "P": None, "Q": 30, "r": "3", "grid": 32},
    "toy": {"a": [[3, "1"]], "kappa": "5", "bits": 256},
    "homoclinic": {"k": 1, "eps": ["0.4", "0.2"], "modes": 11, "y_min": "-3", "samples": 31},
    "verify": {"scale": "reduced", "only": None},
}


def parse_f_coeffs(text: str) -> list:
    """``"5:1/10,7:-2"`` -> ``[[5, "1/10"], [7, "-2"]]``."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            d, v = item.split(":")
            Fraction(v)
            out.append([int(d), v.strip()])
        except ValueError as exc:
            raise ConfigError(f"bad coefficient {item!r}; expected degree:value") from exc
    return out


def _series(pairs) -> OddPowerSeries:
    try:
        return OddPowerSeries.from_config(pairs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        shared = data.get("model", {})
        table = data.get(command, {})
        for src in (shared, table):
            for key, val in src.items():
                if key not in cfg:
                    raise ConfigError(f"unknown key {key!r} for {command}")
                cfg[key] = val
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def run_id(command: str, cfg: dict) -> str:
    return hashlib.sha256(canonical({"command": command, "config": cfg}).encode()).hexdigest()


def _now(timing: bool):
    return _dt.datetime.now(_dt.timezone.utc).isoformat() if timing else None


class Output:
    """Collects named outputs and writes them with a manifest."""

    def __init__(self, command: str, cfg: dict, out: str | None, timing: bool = True):
        self.command, self.cfg, self.dir, self.timing = command, cfg, out, timing
        self.started = _now(timing)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def finish(self, status: str, primary: str | None = None, extra: dict | None = None) -> None:
        if self.dir is None:
            if primary is not None:
                sys.stdout.write(self.files[primary])
            return
        root = Path(self.dir)
        root.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (root / name).write_text(text, encoding="utf-8")
        manifest = {
            "run_id": run_id(self.command, self.cfg),
            "command": self.command,
            "config": self.cfg,
            "tool_version": __version__,
            "started": self.started,
            "finished": _now(self.timing),
            "outputs": sorted(self.files),
            "status": status,
        }
        if extra:
            manifest.update(extra)
        (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                            encoding="utf-8")


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _dec(x, digits=None) -> str:
    return decimal_string(x, digits) if digits else decimal_string(x)


# -- commands ----------------------------------------------------------------

def cmd_splitting_scan(cfg: dict, out: Output) -> int:
    from kgsplit.acceptance import eps_grid
    from kgsplit.manifold import PrecisionError, auto_bits, scan_and_fit, scan_csv
    from kgsplit.model import ModelParams

    try:
        k, steps, modes = int(cfg["k"]), int(cfg["eps_steps"]), int(cfg["modes"])
        grid = eps_grid(cfg["eps_min"], cfg["eps_max"], steps)
        bits = auto_bits(k, min(grid)) if cfg["bits"] in ("auto", None) else int(cfg["bits"])
        template = ModelParams(k=k, f=_series(cfg["f_coeffs"]), n_max=modes, bits=bits)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc
    if steps < 1:
        raise ConfigError("eps_steps must be positive")
    try:
        res = scan_and_fit(template, grid, P=int(cfg["order"]), bits=bits, jobs=int(cfg["jobs"]))
    except PrecisionError as exc:
        print(f"untrusted sample: {exc}", file=sys.stderr)
        return EXIT_PRECISION
    text = scan_csv(res)
    if not out.timing:
        text = _blank_seconds(text)
    out.add("splitting_scan.csv", text)
    with PrecisionContext(bits).local():
        rows = []
        for s in res.samples:
            e = gmpy2.mpfr(s.eps.numerator) / s.eps.denominator
            rows.append(f"{_dec(1 / e, 30)} {_dec(gmpy2.log(s.s_eps) + gmpy2.log(e), 30)}")
    out.add("splitting_scan.dat", "# 1/eps  log(s_eps) + log(eps)\n" + "\n".join(rows) + "\n")
    fit = {"rate": res.rate, "intercept": res.intercept, "rate_theory": math.pi * math.sqrt(2 * k),
           "grid": [str(e) for e in grid], "bits": bits}
    out.add("fit.json", _json(fit))
    out.finish("ok", "splitting_scan.csv", {"fit": fit})
    return EXIT_OK


def _blank_seconds(text: str) -> str:
    rows = list(csv.reader(io.StringIO(text)))
    col = rows[0].index("seconds")
    for r in rows[1:]:
        r[col] = ""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_stokes_inner(cfg: dict, out: Output) -> int:
    from kgsplit.inner import BudgetError, extract_stokes, family_f

    try:
        f = _series(cfg["f_coeffs"])
        if cfg["mu"] is not None:
            f = family_f(Fraction(str(cfg["mu"])), f)
        r0, R = float(Fraction(str(cfg["r0"]))), float(Fraction(str(cfg["R"])))
        modes = int(cfg["modes"])
        bits = None if cfg["bits"] in (None, "auto") else int(cfg["bits"])
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        est = extract_stokes(f, R=R, r0=r0, n_max=modes, bits=bits)
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_PRECISION
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    with PrecisionContext(est.bits).local():
        payload = {
            "C_in_re": _dec(est.value.real, 20), "C_in_im": _dec(est.value.imag, 20),
            "r0": r0, "R": R, "n_max": est.n_max, "bits": est.bits,
            "error_bar": _dec(est.error_bar, 6), "trusted": bool(est.trusted),
            # even orders carry no term, so report the sums after each odd order
            "partial_sums": [[_dec(c.real, 12), _dec(c.imag, 12)] for c in est.partial_sums[::2]],
        }
    out.add("stokes_inner.json", _json(payload))
    out.finish("ok", "stokes_inner.json")
    return EXIT_OK


def cmd_melnikov(cfg: dict, out: Output) -> int:
    from kgsplit.melnikov import delta_of_f, melnikov_quadrature, s_of_delta, theta_taylor

    try:
        f = _series(cfg["f_coeffs"])
        Q = int(cfg["Q"])
        P = int(cfg["P"]) if cfg["P"] is not None else 2 * Q + 7
        r, grid = float(Fraction(str(cfg["r"]))), int(cfg["grid"])
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc
    with PrecisionContext(192).local():
        try:
            S, _ = s_of_delta(theta_taylor(delta_of_f(f, (P + 1) // 2), P), Q)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        c = gmpy2.mpc(0, 4) * gmpy2.sqrt(gmpy2.mpfr(2)) * gmpy2.const_pi() * S
        try:
            q = melnikov_quadrature(f, r=r, tau_points=grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        rel = abs(q.value - complex(c)) / abs(complex(c)) if S != 0 else None
        payload = {
            "S_delta": _dec(S, 25), "C_in_prime_re": _dec(c.real, 25), "C_in_prime_im": _dec(c.imag, 25),
            "quadrature_value": [repr(q.value.real), repr(q.value.imag)],
            "agreement_rel": rel, "P": P, "Q": Q, "r": r, "grid": grid,
        }
    out.add("melnikov.json", _json(payload))
    out.finish("ok", "melnikov.json")
    return EXIT_OK


def cmd_toy(cfg: dict, out: Output) -> int:
    from kgsplit.inner import toy_splitting_closed_form, toy_splitting_numeric

    try:
        a = {int(d): Fraction(str(v)) for d, v in cfg["a"]}
        kappa = Fraction(str(cfg["kappa"]))
        bits = int(cfg["bits"])
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc
    with PrecisionContext(bits).local():
        try:
            closed = toy_splitting_closed_form(a, kappa)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        num = toy_splitting_numeric(a, kappa)
        gap = abs(num - closed) / abs(closed) if closed != 0 else abs(num)
        payload = {
            "closed_form": [_dec(closed.real, 25), _dec(closed.imag, 25)],
            "numeric": [_dec(num.real, 25), _dec(num.imag, 25)],
            "relative_gap": _dec(gap, 6), "kappa": str(kappa), "bits": bits,
        }
    out.add("toy.json", _json(payload))
    out.finish("ok", "toy.json")
    return EXIT_OK


def cmd_homoclinic(cfg: dict, out: Output) -> int:
    from kgsplit.manifold import auto_bits, check_outer_estimate, section_trajectory
    from kgsplit.model import ModelParams, _decimal, duffing_homoclinic

    try:
        eps_list = cfg["eps"] if isinstance(cfg["eps"], list) else [cfg["eps"]]
        eps_list = [Fraction(str(e)) for e in eps_list]
        k, modes, samples = int(cfg["k"]), int(cfg["modes"]), int(cfg["samples"])
        y_min = Fraction(str(cfg["y_min"]))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["eps", "y", "v_h", "v_1", "tail_l1"])
    report = []
    for e in eps_list:
        try:
            p = ModelParams(k=k, eps=e, n_max=modes, bits=auto_bits(k, e))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        with p.context.local():
            traj = section_trajectory(p, Y=1 - gmpy2.mpfr(y_min.numerator) / y_min.denominator)
            for i in range(samples):
                y = gmpy2.mpfr(y_min.numerator) / y_min.denominator * (samples - 1 - i) / (samples - 1)
                st = traj.state_at(y)
                vh, _ = duffing_homoclinic(y)
                tail = sum(abs(c) for c in st.v.coeffs[1:])
                wr.writerow([_decimal(e), _dec(y, 12), _dec(vh, 20), _dec(st.v.coeffs[0], 20), _dec(tail, 6)])
            ratio = check_outer_estimate(p, traj, y_min=y_min, samples=samples)["sup_ratio"]
        report.append({"eps": _decimal(e), "sup_ratio": ratio})
    spread = None
    if len(report) > 1:
        rs = [r["sup_ratio"] for r in report]
        spread = max(rs) / min(rs)
    payload = {"report": report, "max_over_min": spread, "bounded_within_1_5": None if spread is None
               else spread <= 1.5}
    out.add("homoclinic.csv", buf.getvalue())
    out.add("outer_ratio.json", _json(payload))
    if out.dir is None:
        sys.stdout.write(buf.getvalue())
        sys.stdout.write(_json(payload))
        return EXIT_OK
    out.finish("ok")
    return EXIT_OK


def cmd_verify(cfg: dict, out: Output) -> int:
    from kgsplit.acceptance import FULL, REDUCED, run_checks

    table = FULL if cfg["scale"] == "full" else REDUCED
    only = cfg["only"]
    if isinstance(only, str):
        only = [s.strip() for s in only.split(",") if s.strip()]
    if only and not set(only) <= set(table):
        raise ConfigError(f"unknown criteria: {sorted(set(only) - set(table))}")
    checks = run_checks(table, only)
    width = max(len(c.name) for c in checks)
    lines = [f"{'criterion':<{max(width, 9)}}  result  seconds  detail"]
    for c in checks:
        lines.append(f"{c.name:<{max(width, 9)}}  {'PASS' if c.passed else 'FAIL':<6}  {c.seconds:7.1f}  "
                     f"{c.detail}")
    text = "\n".join(lines) + "\n"
    out.add("verify.txt", text)
    failed = [c.name for c in checks if not c.passed]
    if out.dir is not None:
        out.finish("failed" if failed else "ok", extra={"failed": failed})
    sys.stdout.write(text)
    return EXIT_ACCEPTANCE if failed else EXIT_OK


COMMANDS = {
    "splitting-scan": cmd_splitting_scan,
    "stokes-inner": cmd_stokes_inner,
    "melnikov": cmd_melnikov,
    "toy": cmd_toy,
    "homoclinic": cmd_homoclinic,
    "verify": cmd_verify,
}


# -- parser ------------------------------------------------------------------

def _f_flags(sp):
    sp.add_argument("--f-coeffs", dest="f_coeffs", type=parse_f_coeffs, default=None,
                    help='odd coefficients of f, e.g. "5:1/10,7:-2"')


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgsplit", description="Breather splitting computations.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--out", default=None, help="output directory (default: stdout)")
        sp.add_argument("--no-timing", dest="no_timing", action="store_true",
                        help="omit wall-clock fields so outputs are byte-reproducible")

    sp = sub.add_parser("splitting-scan", help="measure s_eps over an eps grid and fit the rate")
    common(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--eps-min", dest="eps_min")
    sp.add_argument("--eps-max", dest="eps_max")
    sp.add_argument("--eps-steps", dest="eps_steps", type=int)
    sp.add_argument("--modes", type=int, help="largest stored odd mode")
    sp.add_argument("--bits", help='mantissa bits or "auto"')
    sp.add_argument("--order", type=int, help="order P of the manifold expansion")
    sp.add_argument("--jobs", type=int)
    _f_flags(sp)

    sp = sub.add_parser("stokes-inner", help="extract the Stokes constant of the inner equation")
    common(sp)
    sp.add_argument("--r0")
    sp.add_argument("--R")
    sp.add_argument("--modes", type=int)
    sp.add_argument("--bits", type=int)
    sp.add_argument("--mu", help="sine-Gordon family parameter")
    _f_flags(sp)

    sp = sub.add_parser("melnikov", help="first-order Stokes constant, series and quadrature")
    common(sp)
    sp.add_argument("--P", type=int)
    sp.add_argument("--Q", type=int)
    sp.add_argument("--r")
    sp.add_argument("--grid", type=int, help="tau quadrature points")
    _f_flags(sp)

    sp = sub.add_parser("toy", help="toy model splitting, closed form and numeric")
    common(sp)
    sp.add_argument("--a", type=parse_f_coeffs, help='forcing coefficients, e.g. "3:1,5:1/2"')
    sp.add_argument("--kappa")
    sp.add_argument("--bits", type=int)

    sp = sub.add_parser("homoclinic", help="outer orbit against the Duffing homoclinic")
    common(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--eps", nargs="+")
    sp.add_argument("--modes", type=int)
    sp.add_argument("--y-min", dest="y_min")
    sp.add_argument("--samples", type=int)

    sp = sub.add_parser("verify", help="run the acceptance checks")
    common(sp)
    sp.add_argument("--scale", choices=["reduced", "full"])
    sp.add_argument("--only", help="comma-separated criteria, e.g. A1,A4")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args.command, args)
        out = Output(args.command, cfg, args.out, timing=not args.no_timing)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
