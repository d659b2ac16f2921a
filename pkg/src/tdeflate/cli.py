"""Command-line interface: ``tdeflate {predict,simulate,deflate,estimate,sweep}``.

Every subcommand writes CSV (header always present, LF line endings,
floats in shortest round-trip form, blanks for missing values).
Parameters come from, in increasing priority: built-in defaults, the
``[<subcommand>]`` section of an INI file given by ``--config``, and
command-line flags.  With ``--output FILE`` the effective parameters are
echoed to ``FILE.config.ini``.

Exit codes: 0 success (including empty theory results), 2 usage or
validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
from pathlib import Path

import numpy as np

from ._validation import DomainError
from .asymptotics import NewtonConfig, solve_first_spike, solve_forward
from .deflation import PowerIterationConfig, deflate
from .estimation import MeasuredTriple, NoRootError, estimate_snr, measure_triple_from_deflation, naive_estimate
from .simulation import SWEEP_COLUMNS, SpikedModelSpec, run_trials, sweep_grid
from .tensor import TensorFileError, read_tensor, write_tensor

SEED_ENV = "TDEFLATE_SEED"

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

PREDICT_COLUMNS = (
    "beta1", "beta2", "alpha", "branch_id", "lambda1", "lambda2", "eta",
    "rho11", "rho12", "rho21", "rho22", "residual",
)
DEFLATE_COLUMNS = (
    "trial", "lambda1_hat", "lambda2_hat", "eta_hat", "rho11_hat", "rho12_hat",
    "rho21_hat", "rho22_hat", "kkt1", "kkt2", "converged1", "converged2",
)
ESTIMATE_COLUMNS = (
    "trial", "beta1_hat", "beta2_hat", "alpha_hat", "rho11_hat", "rho12_hat",
    "rho21_hat", "rho22_hat", "residual", "is_primary", "beta1_naive", "beta2_naive",
)


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _dims(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    try:
        dims = tuple(int(v) for v in str(text).replace("x", ",").split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid dims {text!r}") from exc
    return dims


def _grid(text) -> list:
    """``"a:b:n"`` (n evenly spaced points) or a comma-separated list."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text)
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return [float(v) for v in np.linspace(float(a), float(b), int(n))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}") from exc


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"invalid boolean {text!r}")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# name -> (type, default, help); defaults of None mean "required unless
# another option supplies the input"
_NEWTON = {
    "num_starts": (int, 64, "Newton starts per solve"),
    "newton_tol": (float, 1e-12, "residual sup-norm tolerance"),
    "newton_max_iter": (int, 200, "Newton iterations per start"),
}
_MODEL = {
    "dims": (_dims, (50, 50, 50), "tensor dimensions, e.g. 50,50,50"),
    "beta1": (float, None, "SNR of the first spike"),
    "beta2": (float, None, "SNR of the second spike"),
    "alpha": (float, 0.0, "alignment <x1, x2> in every mode"),
    "trials": (int, 1, "number of Monte Carlo trials"),
    "steps": (int, 2, "deflation steps"),
    "tol": (float, 1e-10, "power-iteration tolerance"),
    "max_iter": (int, 500, "power-iteration sweeps"),
    "require_convergence": (_bool, False, "exit 3 if any step fails to converge"),
}
SCHEMAS = {
    "predict": {
        "beta1": (float, None, "SNR of the first spike"),
        "beta2": (float, None, "SNR of the second spike"),
        "alpha": (float, None, "alignment <x1, x2>"),
        "system": (str, "full", "'full' (7 equations) or 'first_spike' (first 3)"),
        **_NEWTON,
    },
    "simulate": {**_MODEL, "tensor_out": (str, None, "write each trial's tensor; '{trial}' is substituted")},
    "deflate": {**_MODEL, "tensor": (str, None, "SPKT tensor file to deflate instead of simulating")},
    "estimate": {
        "lambda1": (float, None, "measured first singular value"),
        "lambda2": (float, None, "measured second singular value"),
        "eta": (float, None, "measured |<u1, u2>|"),
        "input": (str, None, "deflation CSV to read measurements from"),
        **_NEWTON,
    },
    "sweep": {
        "beta1_grid": (_grid, None, "beta1 values: 'a:b:n' or a comma list"),
        "beta2_grid": (_grid, None, "beta2 values"),
        "alpha_grid": (_grid, None, "alpha values"),
        "mode": (str, "theory", "theory, empirical or both"),
        "system": (str, "first_spike", "'first_spike' or 'full'"),
        "dims": (_dims, (50, 50, 50), "tensor dimensions for empirical mode"),
        "trials": (int, 10, "trials per grid point in empirical mode"),
        "tol": (float, 1e-10, "power-iteration tolerance"),
        "max_iter": (int, 500, "power-iteration sweeps"),
        **_NEWTON,
    },
}
COMMON = {
    "seed": (int, None, f"random seed (default: ${SEED_ENV} or 0)"),
    "threads": (int, 1, "worker threads"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdeflate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with a [%s] section" % name)
        p.add_argument("--output", "-o", default="-", help="CSV path, '-' for stdout")
        for key, (typ, default, text) in {**schema, **COMMON}.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=typ, default=None, help=f"{text} (default: {default})")
    return parser


def effective_params(command: str, args: argparse.Namespace) -> dict:
    schema = {**SCHEMAS[command], **COMMON}
    params = {key: default for key, (_, default, _) in schema.items()}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"malformed config file: {exc}") from exc
        if cp.has_section(command):
            for key, raw in cp.items(command, raw=True):
                key = key.replace("-", "_")
                if key not in schema:
                    raise UsageError(f"unknown key {key!r} in [{command}] of {args.config}")
                try:
                    params[key] = schema[key][0](raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"bad value for {key!r}: {exc}") from exc
    for key in schema:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if params["seed"] is None:
        params["seed"] = _default_seed()
    if params["seed"] < 0:
        raise UsageError("seed must be nonnegative")
    if params["threads"] < 1:
        raise UsageError("threads must be at least 1")
    return params


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(stream, columns, rows) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])


def _newton_cfg(p) -> NewtonConfig:
    try:
        return NewtonConfig(tol=p["newton_tol"], max_iter=p["newton_max_iter"], num_starts=p["num_starts"], seed=p["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _power_cfg(p) -> PowerIterationConfig:
    try:
        return PowerIterationConfig(tol=p["tol"], max_iter=p["max_iter"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _need(p, *keys):
    missing = [k for k in keys if p.get(k) is None]
    if missing:
        raise UsageError("missing required parameter(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _check_beta_alpha(p, alpha_key="alpha"):
    for key in ("beta1", "beta2"):
        if p[key] < 0:
            raise UsageError(f"--{key} must be nonnegative")
    if not 0.0 <= p[alpha_key] <= 1.0:
        raise UsageError(f"--alpha must lie in [0, 1], got {p[alpha_key]}")


def cmd_predict(p) -> list:
    _need(p, "beta1", "beta2", "alpha")
    _check_beta_alpha(p)
    if p["system"] not in ("full", "first_spike"):
        raise UsageError("--system must be 'full' or 'first_spike'")
    beta = (p["beta1"], p["beta2"], p["alpha"])
    cfg = _newton_cfg(p)
    base = {"beta1": beta[0], "beta2": beta[1], "alpha": beta[2]}
    rows = []
    if p["system"] == "first_spike":
        for n, (lam1, r11, r21) in enumerate(solve_first_spike(beta, cfg)):
            rows.append({**base, "branch_id": n, "lambda1": lam1, "rho11": r11, "rho21": r21})
        return rows
    for s in solve_forward(beta, cfg):
        lam1, lam2, eta = s.psi_lam
        r11, r12, r21, r22 = s.psi_rho
        rows.append({**base, "branch_id": s.branch_id, "lambda1": lam1, "lambda2": lam2, "eta": eta,
                     "rho11": r11, "rho12": r12, "rho21": r21, "rho22": r22, "residual": s.residual_norm})
    return rows


def _model_spec(p) -> SpikedModelSpec:
    _need(p, "beta1", "beta2")
    _check_beta_alpha(p)
    if p["trials"] < 1:
        raise UsageError("--trials must be at least 1")
    if p["steps"] < 1:
        raise UsageError("--steps must be at least 1")
    try:
        return SpikedModelSpec(betas=(p["beta1"], p["beta2"]), dims=p["dims"], alpha=p["alpha"], seed=p["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _deflation_row(trial, lambdas, kkt, converged, eta=None, rho=None) -> dict:
    row = {"trial": trial, "lambda1_hat": lambdas[0], "kkt1": kkt[0], "converged1": bool(converged[0])}
    if len(lambdas) > 1:
        row.update(lambda2_hat=lambdas[1], kkt2=kkt[1], converged2=bool(converged[1]), eta_hat=eta)
    if rho is not None:
        row.update(rho11_hat=rho[0][0], rho21_hat=rho[1][0])
        if len(lambdas) > 1:
            row.update(rho12_hat=rho[0][1], rho22_hat=rho[1][1])
    return row


def _trial_rows(p, spec) -> list:
    results = run_trials(spec, p["trials"], num_steps=p["steps"], power_cfg=_power_cfg(p), threads=p["threads"])
    rows = []
    for res in results:
        s = len(res.lambdas)
        rho = [[res.rho_hat(i, j) for j in range(s)] for i in range(spec.r)]
        rows.append(_deflation_row(res.trial, res.lambdas, res.kkt, res.converged,
                                   eta=res.eta_hat if s > 1 else None, rho=rho))
    if p["require_convergence"] and not all(all(r.converged) for r in results):
        raise NumericalFailure("power iteration failed to converge", rows)
    return rows


def cmd_simulate(p) -> list:
    spec = _model_spec(p)
    if p["tensor_out"]:
        from .simulation import STREAM_NOISE, STREAM_TRUTH, make_ground_truth, make_stream, sample_spiked_tensor

        pattern = p["tensor_out"]
        for k in range(p["trials"]):
            truth = make_ground_truth(spec, make_stream(spec.seed, k, STREAM_TRUTH))
            t = sample_spiked_tensor(spec, truth, make_stream(spec.seed, k, STREAM_NOISE))
            if "{trial}" in pattern:
                path = pattern.replace("{trial}", str(k))
            elif p["trials"] == 1:
                path = pattern
            else:
                raise UsageError("--tensor-out needs a '{trial}' placeholder when --trials > 1")
            write_tensor(path, t)
    return _trial_rows(p, spec)


def cmd_deflate(p) -> list:
    if p["tensor"] is None:
        return cmd_simulate({**p, "tensor_out": None})
    if p["steps"] < 1:
        raise UsageError("--steps must be at least 1")
    t = read_tensor(p["tensor"])
    if t.ndim < 3:
        raise UsageError(f"tensor file holds an order-{t.ndim} array; need order >= 3")
    record = deflate(t, p["steps"], _power_cfg(p))
    eta = measure_triple_from_deflation(record).eta_hat if p["steps"] > 1 else None
    rows = [_deflation_row(0, record.lambdas, [s.kkt_residual for s in record.steps], record.converged, eta=eta)]
    if p["require_convergence"] and not all(record.converged):
        raise NumericalFailure("power iteration failed to converge", rows)
    return rows


def _estimate_rows(trial, triple, cfg) -> list:
    naive = naive_estimate(triple)
    base = {"trial": trial, "beta1_naive": naive[0], "beta2_naive": naive[1]}
    rows = []
    for e in estimate_snr(triple, cfg):
        rows.append({**base, "beta1_hat": e.beta1_hat, "beta2_hat": e.beta2_hat, "alpha_hat": e.alpha_hat,
                     "rho11_hat": e.rho_hat[0], "rho12_hat": e.rho_hat[1], "rho21_hat": e.rho_hat[2],
                     "rho22_hat": e.rho_hat[3], "residual": e.residual_norm, "is_primary": e.is_primary})
    return rows


def _read_measurements(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        out = []
        for n, rec in enumerate(reader):
            # accept deflation output and predict output alike
            if {"lambda1_hat", "lambda2_hat", "eta_hat"} <= fields:
                keys, trial = ("lambda1_hat", "lambda2_hat", "eta_hat"), rec.get("trial") or n
            elif {"lambda1", "lambda2", "eta"} <= fields:
                keys, trial = ("lambda1", "lambda2", "eta"), n
            else:
                raise UsageError(f"{path}: need lambda1_hat, lambda2_hat, eta_hat columns")
            try:
                out.append((int(trial), *(float(rec[k]) for k in keys)))
            except ValueError as exc:
                raise UsageError(f"{path}: row {n + 1}: {exc}") from exc
    return out


def cmd_estimate(p) -> list:
    cfg = _newton_cfg(p)
    if p["input"] is None:
        _need(p, "lambda1", "lambda2", "eta")
        if not 0.0 <= p["eta"] <= 1.0:
            raise UsageError("--eta must lie in [0, 1]")
        triple = MeasuredTriple(p["lambda1"], p["lambda2"], p["eta"])
        try:
            return _estimate_rows(0, triple, cfg)
        except DomainError as exc:
            raise UsageError(str(exc)) from exc
        except NoRootError as exc:
            raise NumericalFailure(str(exc), []) from exc
    rows = []
    for trial, l1, l2, eta in _read_measurements(p["input"]):
        triple = MeasuredTriple(l1, l2, min(max(eta, 0.0), 1.0))
        try:
            rows.extend(_estimate_rows(trial, triple, cfg))
        except (DomainError, NoRootError):
            naive = naive_estimate(triple)
            rows.append({"trial": trial, "is_primary": False, "beta1_naive": naive[0], "beta2_naive": naive[1]})
    return rows


def cmd_sweep(p) -> list:
    _need(p, "beta1_grid", "beta2_grid", "alpha_grid")
    if p["mode"] not in ("theory", "empirical", "both"):
        raise UsageError("--mode must be theory, empirical or both")
    if p["system"] not in ("first_spike", "full"):
        raise UsageError("--system must be 'first_spike' or 'full'")
    for a in p["alpha_grid"]:
        if not 0.0 <= a <= 1.0:
            raise UsageError("alpha grid values must lie in [0, 1]")
    if min(p["beta1_grid"] + p["beta2_grid"]) < 0:
        raise UsageError("beta grid values must be nonnegative")
    return sweep_grid(
        p["beta1_grid"], p["beta2_grid"], p["alpha_grid"], p["mode"], system=p["system"],
        newton_cfg=_newton_cfg(p), dims=p["dims"], trials=p["trials"], seed=p["seed"],
        power_cfg=_power_cfg(p), threads=p["threads"],
    )


COMMANDS = {
    "predict": (cmd_predict, PREDICT_COLUMNS),
    "simulate": (cmd_simulate, DEFLATE_COLUMNS),
    "deflate": (cmd_deflate, DEFLATE_COLUMNS),
    "estimate": (cmd_estimate, ESTIMATE_COLUMNS),
    "sweep": (cmd_sweep, SWEEP_COLUMNS),
}


def _emit(output, columns, rows):
    buf = io.StringIO()
    write_csv(buf, columns, rows)
    if output == "-":
        sys.stdout.write(buf.getvalue())
        sys.stdout.flush()
    else:
        Path(output).write_text(buf.getvalue(), encoding="utf-8", newline="")


def _write_sidecar(output, command, params):
    cp = configparser.ConfigParser()
    section = {}
    for key, value in params.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(_fmt(v) for v in value)
        section[key] = _fmt(value)
    cp[command] = section
    with open(str(output) + ".config.ini", "w", encoding="utf-8", newline="\n") as fh:
        cp.write(fh)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func, columns = COMMANDS[args.command]
    try:
        params = effective_params(args.command, args)
        rows = func(params)
    except UsageError as exc:
        parser.exit(EXIT_USAGE, f"tdeflate {args.command}: error: {exc}\n")
    except NumericalFailure as exc:
        message, rows = exc.args
        _emit(args.output, columns, rows)
        print(f"tdeflate {args.command}: numerical failure: {message}", file=sys.stderr)
        return EXIT_NUMERIC
    except TensorFileError as exc:
        print(f"tdeflate {args.command}: malformed tensor file: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"tdeflate {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        _emit(args.output, columns, rows)
        if args.output != "-":
            _write_sidecar(args.output, args.command, params)
    except OSError as exc:
        print(f"tdeflate {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
