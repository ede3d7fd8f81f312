"""Command-line pipeline: panel analysis, cluster-count estimation, factor
model eigenstructures, synthetic data generation and the new-cluster
F-test.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .errors import NumericalError, ValidationError
from . import clusters as clusters_mod
from . import factor_model as fm
from . import panel as panel_mod
from . import spectral as spectral_mod
from . import synth as synth_mod
from .panel import FLOAT_FMT, PSD_TOL, _atomic_write

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "mode": {"enum": ["binary", "dense"]},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "assignment": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "phi": {"type": "array"},
        "xi": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "omega": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}},
        },
    },
    "required": ["mode", "phi"],
}


def _emit(text, out_path):
    if out_path:
        _atomic_write(out_path, text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_model(path):
    if not os.path.exists(path):
        raise ValidationError(f"model file not found: {path}")
    import jsonschema

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: model document must be a JSON object")
    validator = jsonschema.Draft7Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ValidationError(f"model schema violation at {pointer}: {err.message}")
    if doc["mode"] == "binary" and "assignment" not in doc and "sizes" in doc:
        sizes = doc["sizes"]
        doc["assignment"] = [
            a + 1 for a, sz in enumerate(sizes) for _ in range(sz)
        ]
    try:
        return fm.FactorModel.from_json(json.dumps(doc))
    except KeyError as exc:
        raise ValidationError(f"model schema violation at /{exc.args[0]}: missing") from None


def load_loadings_csv(path, labels):
    """Binary loadings CSV (header alpha,cluster; 1-based cluster ids),
    aligned with the given panel labels."""
    if not os.path.exists(path):
        raise ValidationError(f"loadings file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["alpha", "cluster"]:
        raise ValidationError(f"{path}: header must be 'alpha,cluster'")
    mapping = {}
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ValidationError(f"{path}: row {r} must have 2 fields")
        try:
            mapping[row[0]] = int(row[1])
        except ValueError:
            raise ValidationError(f"{path}: row {r}: bad cluster id {row[1]!r}") from None
    missing = [lab for lab in labels if lab not in mapping]
    if missing:
        raise ValidationError(f"{path}: no cluster for alpha {missing[0]!r}")
    assignment = np.array([mapping[lab] for lab in labels])
    f = int(assignment.max())
    omega = np.zeros((len(labels), f))
    omega[np.arange(len(labels)), assignment - 1] = 1.0
    return omega


def _model_is_diagonal(model):
    off = model.phi_cov - np.diag(np.diag(model.phi_cov))
    return np.max(np.abs(off)) < 1e-15


def model_eigenstructure(model):
    """Dispatch to the applicable closed-form reduction, falling back to the
    dense solver. Returns (EigenStructure, method_tag)."""
    if model.mode == "binary":
        assignment = np.argmax(model.omega, axis=1) + 1
        sizes = np.bincount(assignment - 1, minlength=model.f)
        if _model_is_diagonal(model):
            spec = fm.ClusterSpec(
                sizes=sizes,
                assignment=assignment,
                phi=np.diag(model.phi_cov),
                xi=_cluster_xi(model, assignment, sizes),
            )
            return fm.binary_eigensystem(spec), "closed-form-binary"
        if np.all(model.xi == 0):
            d = np.sqrt(np.diag(model.phi_cov))
            factor_corr = model.phi_cov / np.outer(d, d)
            np.fill_diagonal(factor_corr, 1.0)
            return fm.reduce_nondiagonal(sizes, factor_corr), "closed-form-nondiagonal"
    elif np.all(model.xi == 0):
        return fm.reduce_nonbinary(model), "reduced-nonbinary"
    summary = fm.dense_rho_star(model)
    _, corr = fm.build_covariance(model)
    w = np.linalg.eigvalsh(corr.psi)[::-1]
    values = [(float(x), 1) for x in w]
    return (
        fm.EigenStructure(values=values, rho_star=summary.rho_star, top_cluster=1),
        "dense",
    )


def _cluster_xi(model, assignment, sizes):
    """Per-cluster specific risk; requires xi uniform within each cluster."""
    xi = np.zeros(len(sizes))
    for a in range(len(sizes)):
        vals = model.xi[assignment == a + 1]
        if vals.size and np.ptp(vals) > 1e-12:
            raise ValidationError(
                f"cluster {a + 1}: specific risk varies within the cluster; "
                "use the dense path"
            )
        xi[a] = vals[0]
    return xi


def cmd_analyze(args):
    if args.corr:
        corr = panel_mod.load_correlation(args.input)
    else:
        panel = panel_mod.load_panel(args.input, na_policy=args.na_policy)
        if args.factors:
            factors = panel_mod.load_panel(args.factors, na_policy=args.na_policy)
            panel = panel_mod.regress_out(panel, factors)
        corr = panel_mod.pairwise_correlation(panel, min_overlap=args.min_overlap)
    deformed = False
    if args.deform:
        w = np.linalg.eigvalsh(corr.psi)
        if w[0] <= PSD_TOL * max(w[-1], 1.0):
            corr = panel_mod.deform_correlation(corr)
            deformed = True
    signs = None
    if not args.raw_basis:
        sign_vec, corr = panel_mod.canonicalize_signs(corr)
        signs = sign_vec.signs.tolist()
    summary = spectral_mod.spectral_summary(corr)
    bound = clusters_mod.lower_bound_F(corr)
    doc = {
        "psi1": summary.psi1,
        "rho_star": summary.rho_star,
        "rho_prime": summary.rho_prime,
        "gamma": summary.gamma,
        "mean_corr": summary.mean_corr,
        "v1": summary.v1.tolist(),
        "cluster_lower_bound": bound.lower_bound,
        "deformed": deformed,
    }
    if signs is not None:
        doc["signs"] = signs
    _emit(json.dumps(doc, indent=2), args.out)


def cmd_clusters(args):
    corr = panel_mod.load_correlation(args.input)
    w = np.linalg.eigvalsh(corr.psi)
    if w[0] <= PSD_TOL * max(w[-1], 1.0):
        if not args.deform:
            raise ValidationError(
                "correlation matrix is not positive definite; pass --deform"
            )
        corr = panel_mod.deform_correlation(corr)
    curve = clusters_mod.residual_correlation_sweep(corr, args.kmax)
    knee, flat = clusters_mod.knee_estimate(
        curve, rel_drop=args.rel_drop, window=args.window
    )
    _emit(curve.to_csv(), args.out)
    summary = json.dumps({"knee": knee, "flat": flat, "rank_used": curve.rank_used})
    if args.summary_out:
        _emit(summary, args.summary_out)
    elif args.out:
        sys.stdout.write(summary + "\n")


def cmd_model(args):
    model = _load_model(args.input)
    if args.op == "eigen":
        structure, method = model_eigenstructure(model)
        doc = json.loads(structure.to_json())
        doc["method"] = method
        _emit(json.dumps(doc), args.out)
    elif args.op == "rho-star":
        structure, method = model_eigenstructure(model)
        _emit(json.dumps({"rho_star": structure.rho_star, "method": method}), args.out)
    elif args.op == "rho-curve":
        if model.mode != "binary":
            raise ValidationError("rho-curve requires a binary model")
        assignment = np.argmax(model.omega, axis=1) + 1
        sizes = np.bincount(assignment - 1, minlength=model.f)
        grid = [float(x) for x in args.grid.split(",")]
        lines = ["rho,psi_star"]
        for rho in grid:
            psi_star = fm.secular_roots(sizes, rho)[0]
            lines.append(f"{FLOAT_FMT % rho},{FLOAT_FMT % psi_star}")
        _emit("\n".join(lines), args.out)
    elif args.op == "sweep-f":
        lines = ["F,rho_star_min"]
        for f in range(1, args.fmax + 1):
            lines.append(f"{f},{FLOAT_FMT % (f ** -1.5)}")
        _emit("\n".join(lines), args.out)


def cmd_synth(args):
    if args.factor_rho != "random":
        try:
            args.factor_rho = float(args.factor_rho)
        except ValueError:
            raise ValidationError(
                f"--factor-rho must be a number or 'random', got {args.factor_rho!r}"
            ) from None
    config = synth_mod.SynthConfig(
        seed=args.seed,
        n_alphas=args.n,
        n_clusters=args.clusters,
        n_obs=args.n_obs,
        phi_range=tuple(args.phi_range),
        xi_range=tuple(args.xi_range),
        factor_rho=args.factor_rho,
        size_scheme=args.size_scheme,
    )
    model = synth_mod.gen_model(config)
    panel = synth_mod.gen_panel(model, config.n_obs, config.seed + 2)
    panel_mod.save_panel(panel, args.panel_out)
    _atomic_write(args.model_out, model.to_json() + "\n")


def cmd_ftest(args):
    panel = panel_mod.load_panel(args.panel, na_policy="literal_NA")
    panel_new = panel_mod.load_panel(args.panel_new, na_policy="literal_NA")
    omega_old = load_loadings_csv(args.omega_old, panel.labels)
    omega_new = load_loadings_csv(args.omega_new, panel_new.labels)
    report = clusters_mod.new_cluster_ftest(
        panel, omega_old, panel_new, omega_new, winsor=args.winsor
    )
    _emit(report.to_csv(), args.out)
    if args.summary_out:
        _emit(report.to_json(), args.summary_out)
    elif args.out:
        sys.stdout.write(report.to_json() + "\n")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="alphaturn",
        description="Spectral and factor-model turnover-reduction analysis",
    )
    parser.add_argument(
        "--config", help="JSON file whose keys mirror the command flags"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="panel/correlation spectral analysis")
    p.add_argument("input", help="panel CSV (or correlation CSV with --corr)")
    p.add_argument("--corr", action="store_true", help="input is a correlation CSV")
    p.add_argument("--factors", help="factor panel CSV to regress out")
    p.add_argument("--deform", action="store_true", help="repair non-PD matrices")
    p.add_argument("--raw-basis", action="store_true", help="skip sign canonicalization")
    p.add_argument("--min-overlap", type=int, default=12)
    p.add_argument("--na-policy", choices=["empty_cell", "literal_NA"], default="literal_NA")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("clusters", help="residual-correlation sweep and knee")
    p.add_argument("input", help="correlation CSV")
    p.add_argument("--kmax", type=int, required=True)
    p.add_argument("--deform", action="store_true")
    p.add_argument("--rel-drop", type=float, default=0.05)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--out", help="sweep CSV path (stdout if omitted)")
    p.add_argument("--summary-out", help="knee JSON path")
    p.set_defaults(func=cmd_clusters)

    p = sub.add_parser("model", help="factor-model eigenstructure tools")
    p.add_argument("input", help="model JSON")
    p.add_argument("--op", choices=["eigen", "rho-star", "rho-curve", "sweep-f"], required=True)
    p.add_argument("--grid", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--fmax", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("synth", help="generate a synthetic model and panel")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--n-obs", type=int, default=1000)
    p.add_argument("--phi-range", type=float, nargs=2, default=[0.5, 2.0])
    p.add_argument("--xi-range", type=float, nargs=2, default=[0.0, 1.0])
    p.add_argument("--factor-rho", default="0.0")
    p.add_argument("--size-scheme", choices=["equal", "random_multinomial"], default="equal")
    p.add_argument("--panel-out", required=True)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ftest", help="new-cluster F-statistic comparison")
    p.add_argument("panel", help="old panel CSV")
    p.add_argument("omega_old", help="old loadings CSV (alpha,cluster)")
    p.add_argument("panel_new", help="old+new panel CSV")
    p.add_argument("omega_new", help="old+new loadings CSV")
    p.add_argument("--winsor", type=float, default=0.05)
    p.add_argument("--out")
    p.add_argument("--summary-out")
    p.set_defaults(func=cmd_ftest)

    return parser


def main(argv=None):
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    # --config supplies defaults for the flags of the chosen subcommand
    if "--config" in argv:
        idx = argv.index("--config")
        cfg_path = argv[idx + 1]
        if not os.path.exists(cfg_path):
            print(f"error: config file not found: {cfg_path}", file=sys.stderr)
            return 2
        with open(cfg_path) as fh:
            cfg = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
        for action in parser._subparsers._group_actions:
            for sp in action.choices.values():
                sp.set_defaults(**{k: v for k, v in cfg.items()
                                   if any(a.dest == k for a in sp._actions)})
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
