"""Experiment driver: subcommands, CSV reports, matrix caching.

Subcommands: roots, omega0, angular, spectrum, localize, vanish, pipeline,
cache.  Configuration comes from key=value files (# comments) overridden by
command-line flags; angles accept deg/rad suffixes.  Outputs are plain CSV
with headers, formatted so identical configurations produce byte-identical
files.  Exit codes: 0 success, 1 usage error, 2 numerical-verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import cache as cachemod
from .angular import eta1, extraction_constant, solve_profile
from .charroots import RootCountMismatch, compute_omega0, find_roots
from .corner import (
    blowup_fit,
    build_zeta1,
    convex_vanishing,
    extract_c1,
    functional_scale,
    singular_functional,
    weighted_regularity_check,
)
from .discretize import (
    GramConditioningError,
    OperatorBundle,
    QuadratureError,
    assemble,
    build_space,
    default_quadrature,
    eval_field,
)
from .geometry import make_sector
from .spectrum import KParams, eval_mode_field, helmholtz_residuals, k_spectrum, synthesize_itef

logger = logging.getLogger("itef")

USAGE_ERROR = 1
NUMERICAL_ERROR = 2


@dataclass
class RunConfig:
    """Everything a pipeline run needs; defaults are the documented ones."""

    omega: float = 1.5 * math.pi
    radius: float = 1.0
    r0: float = 0.2
    n_r: int = 18
    n_theta: int = 14
    enrichment: bool = True
    kappa: float = -80.0
    lam: float = 1.0
    n_modes: int = 20
    fit_lo: float = 1e-3
    fit_hi: float = 1e-2
    epsilons: tuple = tuple(2.0**-k for k in range(3, 9))
    strip_lo: float = 0.01
    strip_hi: float = 0.9999
    outdir: str = "itef-out"
    cache_dir: str = ""
    seed: int = 0
    workers: int = 1
    svg: bool = False
    tol: float = 1e-10


_CONFIG_KEYS = {f.name for f in fields(RunConfig)} | {"lambda", "fit_window"}


def parse_angle(text: str) -> float:
    text = text.strip()
    if text.endswith("deg"):
        return math.radians(float(text[:-3]))
    if text.endswith("rad"):
        return float(text[:-3])
    return float(text)


def load_config_file(path: str) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(cfg: RunConfig, updates: dict) -> RunConfig:
    kwargs = {}
    for key, value in updates.items():
        if value is None:
            continue
        if key == "lambda":
            key = "lam"
        if key == "fit_window":
            lo, _, hi = str(value).partition(":")
            kwargs["fit_lo"], kwargs["fit_hi"] = float(lo), float(hi)
            continue
        if key == "omega":
            kwargs[key] = parse_angle(str(value))
        elif key == "epsilons":
            if isinstance(value, str):
                kwargs[key] = tuple(float(v) for v in value.split(","))
            else:
                kwargs[key] = tuple(value)
        elif key in ("enrichment", "svg"):
            kwargs[key] = str(value).lower() in ("1", "true", "yes", "on")
        elif key in ("n_r", "n_theta", "n_modes", "seed", "workers"):
            kwargs[key] = int(value)
        elif key in ("strip_lo", "strip_hi", "radius", "r0", "kappa", "lam",
                     "fit_lo", "fit_hi", "tol"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return replace(cfg, **kwargs)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _svg_loglog(path: Path, x, y, fit_slope: float, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(x, np.abs(y), "o-", label="data")
    anchor = np.abs(y[0]) * (np.asarray(x) / x[0]) ** fit_slope
    ax.loglog(x, anchor, "--", label=f"slope {fit_slope:.3f}")
    ax.set_title(title)
    ax.legend()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# Assembly with cache
# ---------------------------------------------------------------------------


def _bundle_for(cfg: RunConfig) -> OperatorBundle:
    d = make_sector(cfg.omega, cfg.radius, cfg.r0)
    enrich = ()
    if cfg.enrichment:
        # full strip: the (0,1) roots drive the leading corner term, the
        # remaining strip roots keep the remainder V^4-regular
        enrich = tuple(find_roots(cfg.omega, strip=(0.01, 1.95), seed=cfg.seed))
    space = build_space(d, cfg.n_r, cfg.n_theta, enrich=enrich)
    quad = default_quadrature(space)
    meta = {
        "domain": d.key(),
        "n_r": str(cfg.n_r),
        "n_theta": str(cfg.n_theta),
        "enrichment": space.enrichment_key(),
        "quadrature": quad.signature(),
    }
    directory = cachemod.cache_dir(cfg.cache_dir or None)
    key = cachemod.cache_key(meta)
    hit = cachemod.load_matrices(directory, key)
    if hit is not None:
        A, S, M, _ = hit
        if A.shape[0] == space.dim:
            return OperatorBundle(A=A, S=S, M=M, space=space, quad=quad, meta=meta)
        logger.warning("cache entry %s has wrong dimension; rebuilding", key)
    bundle = assemble(space, quad)
    cachemod.store_matrices(directory, key, bundle.A, bundle.S, bundle.M, meta)
    return bundle


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_roots(cfg: RunConfig, outdir: Path) -> int:
    make_sector(cfg.omega, cfg.radius, cfg.r0)  # rejects degenerate angles
    roots = find_roots(cfg.omega, strip=(cfg.strip_lo, cfg.strip_hi),
                       tol=cfg.tol, seed=cfg.seed)
    rows = [[cfg.omega, r.z.real, r.z.imag, r.multiplicity, r.residual] for r in roots]
    write_csv(outdir / "roots.csv",
              ["omega_rad", "re_z", "im_z", "multiplicity", "residual"], rows)
    print(f"{len(roots)} root(s) written to {outdir / 'roots.csv'}")
    return 0


def cmd_omega0(cfg: RunConfig, outdir: Path) -> int:
    del cfg
    t = compute_omega0()
    write_csv(outdir / "omega0.csv", ["omega0_rad", "omega0_deg", "residual"],
              [[t.omega0, t.degrees, t.residual]])
    print(f"omega0 = {t.omega0:.15f} rad = {t.degrees:.10f} deg (residual {t.residual:.2e})")
    return 0


def cmd_angular(cfg: RunConfig, outdir: Path) -> int:
    make_sector(cfg.omega, cfg.radius, cfg.r0)
    roots = find_roots(cfg.omega, strip=(cfg.strip_lo, cfg.strip_hi),
                       tol=cfg.tol, seed=cfg.seed)
    if not roots:
        print("no roots in the strip; nothing to do", file=sys.stderr)
        return NUMERICAL_ERROR
    profile = solve_profile(roots[0], cfg.omega)
    theta = np.linspace(0.0, cfg.omega, 721)
    rows = [[t, profile.eval(t, 0), profile.eval(t, 1), profile.eval(t, 2)]
            for t in theta]
    write_csv(outdir / "angular.csv", ["theta", "phi", "dphi", "d2phi"], rows)
    print(f"profile at z = {roots[0].z.real:.12f} written to {outdir / 'angular.csv'}")
    return 0


def _spectrum_rows(cfg: RunConfig, bundle: OperatorBundle, kappa: float):
    p = KParams(kappa=kappa, lam=cfg.lam)
    modes = k_spectrum(bundle, p, min(cfg.n_modes, bundle.space.dim))
    rows = []
    out_modes = []
    for m in modes:
        res_v = res_w = float("nan")
        if m.is_real:
            m = synthesize_itef(m)
            res_v, res_w = helmholtz_residuals(bundle, m)
        rows.append([m.j, m.sigma, m.kappa_tilde, m.lambda_tilde,
                     complex(m.k1).real if m.is_real else complex(m.k1),
                     complex(m.k2).real if m.is_real else complex(m.k2),
                     int(m.is_real), res_v, res_w])
        out_modes.append(m)
    return rows, out_modes


def _spectrum_job(args):
    cfg_updates, kappa = args
    cfg = _coerce(RunConfig(), cfg_updates)
    bundle = _bundle_for(cfg)
    rows, _ = _spectrum_rows(cfg, bundle, kappa)
    return kappa, rows


SPECTRUM_HEADER = ["j", "sigma", "kappa_tilde", "lambda_tilde", "k1", "k2",
                   "real_flag", "helmholtz_residual_v", "helmholtz_residual_w"]


def cmd_spectrum(cfg: RunConfig, outdir: Path, kappas: list[float]) -> int:
    if len(kappas) > 1 and cfg.workers > 1:
        cfg_updates = {"omega": f"{cfg.omega}rad", "radius": cfg.radius, "r0": cfg.r0,
                       "n_r": cfg.n_r, "n_theta": cfg.n_theta,
                       "enrichment": str(cfg.enrichment), "lambda": cfg.lam,
                       "n_modes": cfg.n_modes, "cache_dir": cfg.cache_dir,
                       "seed": cfg.seed}
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_spectrum_job, [(cfg_updates, k) for k in kappas]))
    else:
        bundle = _bundle_for(cfg)
        results = [(k, _spectrum_rows(cfg, bundle, k)[0]) for k in kappas]

    for kappa, rows in results:
        name = "spectrum.csv" if len(kappas) == 1 else f"spectrum_kappa{_fmt(kappa)}.csv"
        write_csv(outdir / name, SPECTRUM_HEADER, rows)
    print(f"{len(results)} spectrum file(s) written to {outdir}")
    return 0


LOCALIZE_HEADER = ["mode", "F", "c1_pairing", "c1_fit", "alpha_fit", "correlation"]


def cmd_localize(cfg: RunConfig, outdir: Path) -> int:
    omega0 = compute_omega0().omega0
    if not omega0 < cfg.omega < 2.0 * math.pi:
        print("localization needs omega in (omega0, 2*pi)", file=sys.stderr)
        return USAGE_ERROR
    d = make_sector(cfg.omega, cfg.radius, cfg.r0)
    bundle = _bundle_for(cfg)
    roots = find_roots(cfg.omega, strip=(cfg.strip_lo, cfg.strip_hi), seed=cfg.seed)
    z1 = roots[0]
    phi1 = solve_profile(z1, cfg.omega)
    eta = eta1(d, z1, phi1)
    gamma = extraction_constant(z1.z.real, phi1)
    zf = build_zeta1(bundle, eta)

    rows_spec, modes = _spectrum_rows(cfg, bundle, cfg.kappa)
    write_csv(outdir / "spectrum.csv", SPECTRUM_HEADER, rows_spec)

    window = (cfg.fit_lo * cfg.radius, cfg.fit_hi * cfg.radius)
    ref = lambda t: (1.0 + z1.z.real) ** 2 * phi1.eval(t, 0) + phi1.eval(t, 2)
    rows = []
    first_singular = None
    fit_data = None
    for m in modes:
        if not m.is_real:
            continue
        F = singular_functional(m, zf)
        try:
            c1p, c1f = extract_c1(m, zf, gamma, r_window=window)
        except ValueError:
            rows.append([m.j, F, "nan", "nan", "nan", "nan"])
            continue
        field = lambda r, t, mm=m: eval_field(bundle.space, mm.psi, r, t, "lap")
        alpha, corr = blowup_fit(field, z1.z.real, d, r_window=window,
                                 reference_profile=ref)
        rows.append([m.j, F, c1p, c1f, alpha, corr])
        if first_singular is None:
            first_singular = m
            fit_data = (alpha, corr, c1p, c1f)
    write_csv(outdir / "localize.csv", LOCALIZE_HEADER, rows)

    lines = [f"omega_rad={_fmt(cfg.omega)}", f"kappa={_fmt(cfg.kappa)}",
             f"lambda={_fmt(cfg.lam)}", f"z1={_fmt(z1.z.real)}",
             f"expected_blowup_exponent={_fmt(1.0 - z1.z.real)}"]
    if first_singular is None:
        lines.append("singular_mode=none (all modes inconclusive)")
        (outdir / "summary.txt").write_text("\n".join(lines) + "\n")
        print("no singular mode found", file=sys.stderr)
        return NUMERICAL_ERROR
    alpha, corr, c1p, c1f = fit_data
    lines += [f"first_singular_mode={first_singular.j}",
              f"alpha_fit={_fmt(alpha)}", f"profile_correlation={_fmt(corr)}",
              f"c1_pairing={_fmt(c1p)}", f"c1_fit={_fmt(c1f)}"]
    (outdir / "summary.txt").write_text("\n".join(lines) + "\n")

    if cfg.svg:
        r = np.geomspace(window[0], window[1], 12)
        theta = np.linspace(0, cfg.omega, 64)[1:-1]
        vals = np.abs(eval_field(bundle.space, first_singular.psi, r, theta, "lap")).mean(axis=1)
        _svg_loglog(outdir / "localize.svg", r, vals, -alpha,
                    f"|D psi_{first_singular.j}| corner fit")
    print(f"first singular mode: {first_singular.j} (alpha_fit {_fmt(alpha)})")
    return 0


VANISH_HEADER = ["epsilon", "m_v", "m_w", "beta_fit"]


def cmd_vanish(cfg: RunConfig, outdir: Path) -> int:
    if cfg.omega >= math.pi:
        print("vanishing diagnostics need omega < pi", file=sys.stderr)
        return USAGE_ERROR
    bundle = _bundle_for(cfg)
    rows_spec, modes = _spectrum_rows(cfg, bundle, cfg.kappa)
    write_csv(outdir / "spectrum.csv", SPECTRUM_HEADER, rows_spec)
    mode = next((m for m in modes if m.is_real), None)
    if mode is None:
        print("no real mode to synthesize", file=sys.stderr)
        return NUMERICAL_ERROR
    table = convex_vanishing(mode, bundle, eps_list=[e * cfg.radius for e in cfg.epsilons])
    rows = [[e, mv, mw, table["beta_fit"]]
            for e, mv, mw in zip(table["eps"], table["m_v"], table["m_w"])]
    write_csv(outdir / "vanish.csv", VANISH_HEADER, rows)

    def psi_deriv(r, theta, j, k):
        kind = {(0, 0): "value", (1, 0): "dr", (0, 1): "dtheta"}[(j, k)]
        return eval_field(bundle.space, mode.psi, r, theta, kind)

    reg = weighted_regularity_check(psi_deriv, bundle.space.domain)
    lines = [f"omega_rad={_fmt(cfg.omega)}", f"mode={mode.j}",
             f"beta_v={_fmt(table['beta_v'])}", f"beta_w={_fmt(table['beta_w'])}",
             f"r2_u_norms={','.join(_fmt(v) for v in reg['r2_u'])}",
             f"r1_grad_norms={','.join(_fmt(v) for v in reg['r1_grad'])}",
             f"r2_u_stable={reg['r2_u_stable']}", f"r1_grad_stable={reg['r1_grad_stable']}"]
    (outdir / "summary.txt").write_text("\n".join(lines) + "\n")
    if cfg.svg:
        _svg_loglog(outdir / "vanish.svg", table["eps"], np.abs(table["m_w"]),
                    table["beta_w"], "|m(eps)| of w")
    print(f"corner averages decay with beta_fit {_fmt(table['beta_fit'])}")
    return 0


def cmd_pipeline(cfg: RunConfig, outdir: Path, vanish: bool) -> int:
    code = cmd_roots(cfg, outdir)
    if code:
        return code
    if vanish or cfg.omega < math.pi:
        return cmd_vanish(cfg, outdir)
    return cmd_localize(cfg, outdir)


def cmd_cache(cfg: RunConfig, action: str) -> int:
    directory = cachemod.cache_dir(cfg.cache_dir or None)
    if action == "clear":
        n = cachemod.clear_cache(directory)
        print(f"removed {n} entrie(s) from {directory}")
        return 0
    entries = cachemod.inspect_cache(directory)
    print(f"{len(entries)} entrie(s) in {directory}")
    for e in entries:
        status = "ok" if e.valid else "stale"
        dom = e.meta.get("domain", "?")
        print(f"  {e.path.name}  [{status}]  dim={e.dim}  bytes={e.size}  {dom}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def build_parser() -> _Parser:
    parser = _Parser(prog="itef", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--omega", help="opening angle (suffix deg or rad; bare = rad)")
        p.add_argument("--radius", type=float)
        p.add_argument("--r0", type=float, help="cutoff radius scale (plateau r0/2, support 2*r0)")
        p.add_argument("--n-r", dest="n_r", type=int, help="radial resolution")
        p.add_argument("--n-theta", dest="n_theta", type=int, help="angular resolution")
        p.add_argument("--enrichment", choices=["on", "off"])
        p.add_argument("--lambda", dest="lam", type=float, help="operator parameter lambda > 0")
        p.add_argument("--modes", dest="n_modes", type=int)
        p.add_argument("--fit-window", dest="fit_window",
                       help="blow-up fit window lo:hi (fractions of R)")
        p.add_argument("--epsilons", help="comma list of corner-average radii (fractions of R)")
        p.add_argument("--strip", help="root-search strip lo:hi on Re z")
        p.add_argument("--out", dest="outdir", help="output directory")
        p.add_argument("--cache-dir", dest="cache_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--svg", action="store_true", default=None,
                       help="emit SVG log-log plots")

    for name, helptext in [
        ("roots", "characteristic roots in the strip (CSV)"),
        ("omega0", "threshold angle tan(omega0)=omega0"),
        ("angular", "angular profile of the smallest root (CSV)"),
        ("spectrum", "auxiliary eigenpairs and wavenumbers (CSV)"),
        ("localize", "corner blow-up diagnostics at a re-entrant corner"),
        ("vanish", "corner-average vanishing at a convex corner"),
        ("pipeline", "roots + spectrum + localize/vanish"),
        ("cache", "inspect or clear the matrix cache"),
    ]:
        p = sub.add_parser(name, help=helptext)
        common(p)
        if name == "spectrum":
            p.add_argument("--kappa", help="operator parameter kappa < 0 (comma list sweeps)")
        else:
            p.add_argument("--kappa", type=float)
        if name == "pipeline":
            p.add_argument("--vanish", action="store_true",
                           help="force the convex-corner branch")
        if name == "cache":
            p.add_argument("action", choices=["inspect", "clear"])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = RunConfig()
        if getattr(args, "config", None):
            cfg = _coerce(cfg, load_config_file(args.config))
        updates = {}
        for field in fields(RunConfig):
            if hasattr(args, field.name) and getattr(args, field.name) is not None:
                updates[field.name] = getattr(args, field.name)
        if getattr(args, "fit_window", None):
            updates["fit_window"] = args.fit_window
        if getattr(args, "enrichment", None):
            updates["enrichment"] = args.enrichment == "on"
        if getattr(args, "strip", None):
            lo, _, hi = args.strip.partition(":")
            updates["strip_lo"], updates["strip_hi"] = float(lo), float(hi)
        if getattr(args, "kappa", None) is not None and args.command != "spectrum":
            updates["kappa"] = args.kappa
        cfg = _coerce(cfg, updates)
        outdir = Path(cfg.outdir)

        if args.command == "roots":
            return cmd_roots(cfg, outdir)
        if args.command == "omega0":
            return cmd_omega0(cfg, outdir)
        if args.command == "angular":
            return cmd_angular(cfg, outdir)
        if args.command == "spectrum":
            kappas = ([float(v) for v in str(args.kappa).split(",")]
                      if args.kappa is not None else [cfg.kappa])
            return cmd_spectrum(cfg, outdir, kappas)
        if args.command == "localize":
            return cmd_localize(cfg, outdir)
        if args.command == "vanish":
            return cmd_vanish(cfg, outdir)
        if args.command == "pipeline":
            return cmd_pipeline(cfg, outdir, vanish=args.vanish)
        if args.command == "cache":
            return cmd_cache(cfg, args.action)
        parser.error(f"unknown command {args.command}")
    except (ValueError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (RootCountMismatch, QuadratureError, GramConditioningError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
