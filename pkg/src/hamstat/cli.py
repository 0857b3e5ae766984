"""Command-line front end.

Usage: ``hamstat <command> [options]`` with commands ``eval``, ``variation``,
``optimize``, ``rotate`` and ``ellipticity``.  Every command writes its
outputs into the ``--out`` directory; numbers carry 17 significant digits and
JSON keys are sorted, so identical inputs give byte-identical files.

Exit codes: 0 success, 2 input/parse error, 3 parameter out of range,
4 refusal because a mathematical hypothesis fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .ellipticity import condition4_margin, find_c_n
from .fieldio import FieldFormatError, fmt, read_field, write_field
from .fields import Grid, GridError, SamplingPlan, ScalarField, hessian, k_convexity_margin
from .phase import grassmannian_spread, induced_metric, mean_curvature_norm, phase, volume
from .presets import PresetError, default_grid, make_preset
from .rotation import (
    HypothesisError,
    InversionError,
    RotationParams,
    c11_bound,
    convexity_propagation_check,
    image_box,
    invert_coordinates,
    inverse_rotate,
    lipschitz_ratio,
    rotate_graph,
    rotated_gradient_check,
)
from .variation import (
    BoundaryMask,
    DescentParams,
    SupportError,
    descend,
    discrete_volume,
    first_variation_divergence,
    first_variation_phase,
    harmonicity_residual,
)

EXIT_OK, EXIT_IO, EXIT_PARAM, EXIT_HYPOTHESIS = 0, 2, 3, 4


class ParseError(ValueError):
    """Malformed command-line value (exit code 2)."""


# ---------------------------------------------------------------------------
# deterministic serialisation


def _json_value(v, indent: int) -> str:
    pad = "  " * indent
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f'{pad}  "{k}": {_json_value(v[k], indent + 1)}' for k in sorted(v)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(v, (list, tuple)):
        if not v:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple)) for x in v):
            return "[" + ", ".join(_json_value(x, indent + 1) for x in v) + "]"
        items = [pad + "  " + _json_value(x, indent + 1) for x in v]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if not math.isfinite(x):
            return f'"{x}"'
        return fmt(x)
    if isinstance(v, np.ndarray):
        return _json_value(v.tolist(), indent)
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dumps(obj) -> str:
    return _json_value(obj, 0) + "\n"


def _report_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", "value"])

    def walk(prefix, v):
        if isinstance(v, dict):
            for k in sorted(v):
                walk(f"{prefix}.{k}" if prefix else k, v[k])
        elif isinstance(v, (list, tuple, np.ndarray)):
            for i, x in enumerate(v):
                walk(f"{prefix}[{i}]", x)
        else:
            writer.writerow([prefix, _json_value(v, 0).strip('"')])

    walk("", report)
    return buf.getvalue()


def _field_csv(f: ScalarField) -> str:
    n = f.grid.n
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{i}" for i in range(n)] + ["value"])
    x = f.grid.coords().reshape(-1, n)
    for xi, v in zip(x, f.values.ravel()):
        writer.writerow([fmt(c) for c in xi] + [fmt(v)])
    return buf.getvalue()


class Output:
    """Collects fields and a report, then writes them in the chosen format."""

    def __init__(self, directory: Path, fmt_name: str):
        self.dir = directory
        self.format = fmt_name
        self.fields: dict[str, ScalarField] = {}
        self.extra_files: dict[str, str] = {}

    def field(self, name: str, f: ScalarField) -> None:
        self.fields[name] = f

    def text(self, name: str, content: str) -> None:
        self.extra_files[name] = content

    def write(self, report: dict) -> list[Path]:
        self.dir.mkdir(parents=True, exist_ok=True)
        written = []
        if self.format == "json":
            full = dict(report)
            if self.fields:
                full["fields"] = {name: {"grid": f.grid.to_header(), "values": f.values.ravel().tolist()}
                                  for name, f in self.fields.items()}
            written.append(self._put("report.json", dumps(full)))
        else:
            for name, f in self.fields.items():
                if self.format == "fld":
                    path = self.dir / f"{name}.fld"
                    write_field(f, path)
                    written.append(path)
                else:
                    written.append(self._put(f"{name}.csv", _field_csv(f)))
            if self.format == "csv":
                written.append(self._put("report.csv", _report_csv(report)))
            else:
                written.append(self._put("report.json", dumps(report)))
        for name, content in self.extra_files.items():
            written.append(self._put(name, content))
        return written

    def _put(self, name: str, content: str) -> Path:
        path = self.dir / name
        path.write_text(content, encoding="ascii")
        return path


# ---------------------------------------------------------------------------
# argument handling


def parse_grid(text: str) -> Grid:
    """``n:shape:box``, e.g. ``2:64,64:0,1,0,1`` (box lists lo,hi per axis)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ParseError(f"grid spec {text!r} is not n:shape:box")
    try:
        n = int(parts[0])
        shape = [int(s) for s in parts[1].split(",")]
        box = [float(b) for b in parts[2].split(",")]
    except ValueError as exc:
        raise ParseError(f"grid spec {text!r}: {exc}") from exc
    if len(shape) == 1 and n > 1:
        shape = shape * n
    if len(shape) != n or len(box) != 2 * n:
        raise ParseError(f"grid spec {text!r}: need {n} shape entries and {2 * n} box entries")
    return Grid.box(box[0::2], box[1::2], shape)


def load_potential(args) -> ScalarField:
    if args.input and args.preset:
        raise ParseError("give either --in or --preset, not both")
    if args.input:
        try:
            return read_field(args.input)
        except OSError as exc:
            raise FieldFormatError(f"cannot read {args.input}: {exc}") from exc
    spec = args.preset or "zero"
    grid = parse_grid(args.grid) if args.grid else default_grid(spec)
    return make_preset(spec, grid)


def _plan(args) -> SamplingPlan:
    seed = 0 if args.seed is None else args.seed
    return SamplingPlan(seed=seed)


# ---------------------------------------------------------------------------
# commands


def cmd_eval(args) -> dict:
    u = load_potential(args)
    M = hessian(u)
    theta = phase(M)
    metric = induced_metric(M)
    out = Output(Path(args.out), args.format)
    out.field("theta", theta.field())
    out.field("sqrt_det_g", metric.sqrt_det_field())
    report = {"command": "eval", "grid": u.grid.to_header(), "volume": volume(u),
              "theta_min": float(theta.theta.min()), "theta_max": float(theta.theta.max())}
    if min(u.grid.shape) >= 3:
        H = mean_curvature_norm(u)
        out.field("mean_curvature_norm", H)
        report["mean_curvature_max"] = float(H.values.max())
    plan = _plan(args)
    spread = grassmannian_spread(u, plan)
    report["grassmannian"] = spread.to_dict()
    report["seed"] = plan.seed
    if args.K is not None:
        report["k_convexity"] = k_convexity_margin(u, args.K, plan).to_dict()
    out.write(report)
    return report


def _eta(args, grid: Grid) -> ScalarField:
    return make_preset(args.eta, grid)


def _variation_at(u: ScalarField, eta: ScalarField, t: float) -> dict:
    mask = BoundaryMask.layers(u.grid)
    div = first_variation_divergence(u, eta, mask)
    ph = first_variation_phase(u, eta, mask)
    fd = (discrete_volume(u.grid, u.values + t * eta.values)
          - discrete_volume(u.grid, u.values - t * eta.values)) / (2 * t)
    scale = max(abs(div), abs(ph))
    gap = abs(div - ph) / scale if scale > 0 else 0.0
    return {"shape": list(u.grid.shape), "divergence_form": div, "phase_form": ph,
            "relative_gap": gap, "finite_difference": fd}


def _refined(grid: Grid) -> Grid:
    return Grid.box(grid.lower, grid.upper, [2 * (m - 1) + 1 for m in grid.shape])


def cmd_variation(args) -> dict:
    u = load_potential(args)
    report = {"command": "variation", "eta": args.eta, "grid": u.grid.to_header(),
              "fd_step": args.fd_step}
    report["coarse"] = _variation_at(u, _eta(args, u.grid), args.fd_step)
    if args.refine:
        if not args.preset:
            raise ValueError("--refine needs a preset potential")
        fine_grid = _refined(u.grid)
        fine = _variation_at(make_preset(args.preset, fine_grid), _eta(args, fine_grid), args.fd_step)
        report["fine"] = fine
        report["gap_ratio"] = (report["coarse"]["relative_gap"] / fine["relative_gap"]
                               if fine["relative_gap"] > 0 else None)
    Output(Path(args.out), args.format).write(report)
    return report


def cmd_optimize(args) -> dict:
    u0 = load_potential(args)
    mask = BoundaryMask.layers(u0.grid)
    params = DescentParams(step=args.step, max_iters=args.iters, target=args.tol)
    u, trace = descend(u0, mask, params)
    r0, r1 = trace[0].residual_l2, trace[-1].residual_l2
    F = trace.column("F")
    report = {"command": "optimize", "grid": u0.grid.to_header(), "iterations": trace.iterations,
              "F_initial": float(F[0]), "F_final": float(F[-1]),
              "F_monotone": bool(np.all(np.diff(F) <= 0)),
              "residual_initial": r0, "residual_final": r1,
              "residual_ratio": (r1 / r0) if r0 > 0 else None,
              "max_grad_final": trace[-1].max_grad}
    out = Output(Path(args.out), args.format)
    out.field("u_final", u)
    out.field("residual", harmonicity_residual(u, mask))
    out.text("trace.csv", trace.to_csv())
    out.write(report)
    return report


def cmd_rotate(args) -> dict:
    u = load_potential(args)
    if args.sigma is None:
        raise ValueError("--sigma is required")
    params = RotationParams(args.sigma, args.eps)
    plan = _plan(args)
    rg = rotate_graph(u, params, plan)
    target = parse_grid(args.target) if args.target else image_box(rg)
    ubar = invert_coordinates(rg, target)
    report = {"command": "rotate", "sigma": params.sigma, "eps": params.eps_margin, "seed": plan.seed,
              "source_grid": u.grid.to_header(), "target_grid": target.to_header(),
              "monotonicity": rg.certificate.to_dict(),
              "lipschitz_ratio": lipschitz_ratio(rg, plan).value,
              "ubar_range": float(np.ptp(ubar.values))}
    if min(u.grid.shape) >= 3:
        report["rotated_gradient"] = rotated_gradient_check(u, params, plan).to_dict()
    if 0 < params.sigma:
        report["c11_bound"] = c11_bound(params)
    if args.kappa is not None:
        report["convexity_propagation"] = convexity_propagation_check(u, args.kappa, params, plan).to_dict()
    out = Output(Path(args.out), args.format)
    out.field("ubar", ubar)
    out.text("graph.csv", rg.to_csv())
    if args.roundtrip:
        back_rg = rotate_graph(-ubar, params, plan)
        back_target = image_box(back_rg)
        recovered = inverse_rotate(ubar, params, back_target, plan)
        if args.preset:
            exact = make_preset(args.preset, back_target).values
        else:
            interp = RegularGridInterpolator(u.grid.axes(), u.values)
            exact = interp(back_target.coords().reshape(-1, u.grid.n)).reshape(back_target.shape)
        exact = exact - exact[back_target.center_index()]
        report["roundtrip"] = {"grid": back_target.to_header(),
                               "max_error": float(np.max(np.abs(recovered.values - exact)))}
        out.field("recovered", recovered)
    out.write(report)
    return report


def cmd_ellipticity(args) -> dict:
    if args.seed is None:
        raise ValueError("--seed is required for sampled certificates")
    if args.samples <= 0:
        raise ValueError("--samples must be positive")
    if args.find_c:
        tol = args.tol if args.tol is not None else 1e-2
        c = find_c_n(args.n, tol, args.samples, args.seed)
        report = {"command": "ellipticity", "mode": "find_c", "n": args.n, "c": c, "tol": tol,
                  "samples": args.samples, "seed": args.seed,
                  "margin": condition4_margin(args.n, c, args.samples, args.seed).margin}
    else:
        if args.c is None:
            raise ValueError("--c is required unless --find-c is given")
        report = condition4_margin(args.n, args.c, args.samples, args.seed).to_dict()
        report["command"] = "ellipticity"
        report["mode"] = "margin"
    Output(Path(args.out), args.format).write(report)
    return report


COMMANDS = {"eval": cmd_eval, "variation": cmd_variation, "optimize": cmd_optimize,
            "rotate": cmd_rotate, "ellipticity": cmd_ellipticity}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamstat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--preset", help="closed-form potential, e.g. quad:1,1 or harmonic2d+bump:0.05")
        sp.add_argument("--in", dest="input", help="input field file (.fld or .fldb)")
        sp.add_argument("--grid", help="n:shape:box, e.g. 2:64,64:0,1,0,1")
        sp.add_argument("--out", default="hamstat_out", help="output directory")
        sp.add_argument("--format", choices=["csv", "json", "fld"], default="fld")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("eval", help="phase, metric, volume, mean curvature, spread")
    common(sp)
    sp.add_argument("--K", type=float, default=None, help="also report the K-convexity margin")

    sp = sub.add_parser("variation", help="both first-variation forms for a test function")
    common(sp)
    sp.add_argument("--eta", default="bump:1", help="test-function preset (default bump:1)")
    sp.add_argument("--refine", action="store_true", help="also run with the spacing halved")
    sp.add_argument("--fd-step", type=float, default=1e-6)

    sp = sub.add_parser("optimize", help="gradient descent on the discrete volume")
    common(sp)
    sp.add_argument("--iters", type=int, default=5000)
    sp.add_argument("--step", type=float, default=None, help="initial step (default 0.1 h^4)")
    sp.add_argument("--tol", type=float, default=1e-9, help="stop when max |grad| is below this")

    sp = sub.add_parser("rotate", help="Lewy-Yuan rotation with certificates")
    common(sp)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--kappa", type=float, default=None, help="also check tan(kappa - sigma)-convexity")
    sp.add_argument("--target", help="target grid n:shape:box (default: box inside the image)")
    sp.add_argument("--roundtrip", action="store_true", help="rotate back and report the error")

    sp = sub.add_parser("ellipticity", help="sampled ellipticity margin or c(n) search")
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--c", type=float, default=None)
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--find-c", action="store_true")
    sp.add_argument("--out", default="hamstat_out")
    sp.add_argument("--format", choices=["csv", "json", "fld"], default="json")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with code 2 on bad syntax
    try:
        report = COMMANDS[args.command](args)
    except HypothesisError as exc:
        pair = [] if exc.pair is None else [list(map(float, np.ravel(p))) for p in exc.pair]
        print(f"hamstat: hypothesis refused: {exc}; violating pair {pair}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except InversionError as exc:
        print(f"hamstat: inversion refused: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (FieldFormatError, ParseError, PresetError, OSError) as exc:
        print(f"hamstat: input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SupportError, GridError, ValueError) as exc:
        print(f"hamstat: parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    summary = {k: v for k, v in report.items() if not isinstance(v, (dict, list))}
    print(dumps(summary), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
