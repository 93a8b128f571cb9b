"""Command-line interface: ``fiberkit <subcommand> [options]``.

Every artifact carries a provenance header (package version, SHA-256 of the
resolved configuration, seed). Outputs are written atomically and removed if
the command fails. Exit codes: 0 success, 1 solver/numeric error, 2
usage/configuration/input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import circ0d, eikonal, fiberfield, frames, ldrbm, tissue
from .config import ConfigError, defaults, parse_config
from .exceptions import FiberkitError, ParseError, ValidationError, WellPosednessError
from .geometry import RegionLabel, SurfaceLabel, generate_idealized_biventricle, parse_label
from .laplace import recover_gradient, solve_laplace
from .vtkio import format_vtk, read_vtk

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
_USAGE_ERRORS = (ConfigError, ValidationError, ParseError, WellPosednessError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------- plumbing

class Context:
    """Resolved configuration, seed and the outputs written so far."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.written = []

    @property
    def seed(self):
        return self.cfg["general"]["seed"]

    def provenance(self):
        return {"fiberkit": __version__, "command": self.command,
                "config_sha256": self.cfg.sha256, "seed": self.seed}

    def header_line(self):
        p = self.provenance()
        return " ".join(f"{k}={v}" for k, v in p.items())

    def _write(self, path, text):
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".part")
        self.written.append(tmp)
        tmp.write_text(text)
        os.replace(tmp, path)
        self.written[-1] = path

    def write_vtk(self, path, mesh, point_data=None, cell_data=None):
        self._write(path, format_vtk(mesh, point_data, cell_data, title=self.header_line()))

    def write_table(self, path, header, rows, comments=()):
        buf = io.StringIO()
        buf.write(f"# {self.header_line()}\n")
        for c in comments:
            buf.write(f"# {c}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self._write(path, buf.getvalue())

    def write_json(self, path, obj):
        obj = {"provenance": self.provenance(), **obj}
        self._write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def write_text(self, path, lines):
        self._write(path, f"# {self.header_line()}\n" + "\n".join(lines) + "\n")

    def cleanup(self):
        for p in self.written:
            try:
                Path(p).unlink()
            except FileNotFoundError:
                pass
        self.written = []


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _require_file(path, what="input"):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


def _load(path):
    return read_vtk(_require_file(path, "mesh"))


def _kv_lines(d):
    return [f"{k} = {_fmt(v)}" for k, v in d.items()]


def _emit(lines):
    for line in lines:
        print(line)


def _set_threads(n):
    """Limit BLAS/OpenMP pools; 0 means all available cores."""
    from threadpoolctl import threadpool_limits

    n = int(n) if n else (os.cpu_count() or 1)
    return threadpool_limits(limits=n)


# ------------------------------------------------------------ field helpers

def _point(data, name, ncomp=None):
    if name not in data.point_data:
        raise ValidationError(f"mesh has no point array {name!r}; run the producing step first")
    a = np.asarray(data.point_data[name], dtype=float)
    if ncomp is not None and ncomp > 1 and a.shape[-1] != ncomp:
        raise ValidationError(f"point array {name!r} must have {ncomp} components")
    return a if ncomp != 1 else a.reshape(-1)


def _coordinates(data, ctx):
    pd = data.point_data
    if "phi" in pd and "psi" in pd:
        return _point(data, "phi", 1), _point(data, "psi", 1)
    rtol = ctx.cfg["laplace"]["rtol"]
    phi = solve_laplace(data.mesh, ldrbm.TRANSMURAL_BCS, rtol=rtol)
    psi = solve_laplace(data.mesh, ldrbm.APICOBASAL_BCS, rtol=rtol)
    return phi, psi


def _frame_of(data, ctx):
    pd = data.point_data
    if all(k in pd for k in ("e_l", "e_t", "e_n")):
        return frames.Frame(_point(data, "e_l", 3), _point(data, "e_t", 3), _point(data, "e_n", 3))
    phi, psi = _coordinates(data, ctx)
    return frames.frame_field(data.mesh, phi, psi)


def _frame_arrays(fr):
    return {"e_l": fr.e_l, "e_t": fr.e_t, "e_n": fr.e_n}


def _triad_arrays(tr):
    return {"f": tr.f, "s": tr.s, "n": tr.n}


def _deg(x):
    return np.degrees(np.asarray(x, dtype=float))


def _layers_and_sides(data, ctx):
    phi, _ = _coordinates(data, ctx)
    return ldrbm.layers_from_phi(data.mesh, phi)


def _apex_stimulus(mesh):
    apex = mesh.nodes_on(SurfaceLabel.APEX)
    if len(apex) == 0:
        raise ValidationError("mesh has no Apex facets; give --stim explicitly")
    pts = mesh.nodes[apex]
    i = apex[int(np.argmin(pts[:, 2]))]
    return eikonal.Stimulus(onset=0.0, nodes=(int(i),))


# ---------------------------------------------------------------- commands

def cmd_mesh(args, ctx):
    g = ctx.cfg["geometry"]
    if args.h_mm is not None:
        g["edge_length_mm"] = args.h_mm
    mesh = generate_idealized_biventricle(target_edge_length=g["edge_length_mm"] * 1e-3,
                                          base_cut_height=g["base_cut_height_mm"] * 1e-3)
    ctx.write_vtk(args.out, mesh)
    _emit(_kv_lines({"nodes": mesh.n_nodes, "tets": mesh.n_tets, "out": args.out}))


def _parse_bcs(items):
    bcs = []
    for item in items:
        if "=" not in item:
            raise ValidationError(f"--bc expects label=value, got {item!r}")
        label, value = item.split("=", 1)
        parse_label(label.strip())
        try:
            bcs.append((label.strip(), float(value)))
        except ValueError:
            raise ValidationError(f"--bc value for {label!r} is not a number: {value!r}") from None
    return bcs


def cmd_laplace(args, ctx):
    data = _load(args.mesh)
    rtol = ctx.cfg["laplace"]["rtol"]
    pd = dict(data.point_data)
    if args.bc:
        pd[args.name] = solve_laplace(data.mesh, _parse_bcs(args.bc), rtol=rtol)
        names = [args.name]
    else:
        pd["phi"] = solve_laplace(data.mesh, ldrbm.TRANSMURAL_BCS, rtol=rtol)
        pd["psi"] = solve_laplace(data.mesh, ldrbm.APICOBASAL_BCS, rtol=rtol)
        names = ["phi", "psi"]
    ctx.write_vtk(args.out, data.mesh, pd, data.cell_data)
    _emit(_kv_lines({f"{n}_range": f"[{pd[n].min():.6g}, {pd[n].max():.6g}]" for n in names}))


def cmd_frames(args, ctx):
    data = _load(args.mesh)
    phi, psi = _coordinates(data, ctx)
    fr = frames.frame_field(data.mesh, phi, psi)
    pd = dict(data.point_data, phi=phi, psi=psi, **_frame_arrays(fr))
    ctx.write_vtk(args.out, data.mesh, pd, data.cell_data)
    _emit(_kv_lines({"repaired_nodes": fr.n_repaired}))


_ANGLE_ARGS = ("alpha_endo_lv", "alpha_epi_lv", "alpha_endo_rv", "alpha_epi_rv",
               "gamma_endo_lv", "gamma_epi_lv", "gamma_endo_rv", "gamma_epi_rv")


def _ldrbm_fields(mesh, ctx, phi=None, psi=None):
    if phi is None:
        rtol = ctx.cfg["laplace"]["rtol"]
        phi = solve_laplace(mesh, ldrbm.TRANSMURAL_BCS, rtol=rtol)
        psi = solve_laplace(mesh, ldrbm.APICOBASAL_BCS, rtol=rtol)
    triad, (a, g, b), fr = ldrbm.ldrbm_fibers(mesh, phi, psi, ctx.cfg.prescribed_angles())
    pd = {"phi": phi, "psi": psi, **_frame_arrays(fr), **_triad_arrays(triad),
          "alpha_deg": _deg(a), "gamma_deg": _deg(g), "beta_deg": _deg(b)}
    return pd, triad, fr


def cmd_ldrbm(args, ctx):
    for name in _ANGLE_ARGS:
        v = getattr(args, name)
        if v is not None:
            ctx.cfg["ldrbm"][f"{name}_deg"] = v
    data = _load(args.mesh)
    pd = dict(data.point_data)
    phi = pd.get("phi")
    psi = pd.get("psi")
    new, _, fr = _ldrbm_fields(data.mesh, ctx,
                               None if phi is None or psi is None else _point(data, "phi", 1),
                               None if phi is None or psi is None else _point(data, "psi", 1))
    pd.update(new)
    ctx.write_vtk(args.out, data.mesh, pd, data.cell_data)
    _emit(_kv_lines({"repaired_nodes": fr.n_repaired, "out": args.out}))


def _angles_of(data, ctx, fr):
    if "f" in data.point_data:
        s = data.point_data.get("s")
        if s is not None and "n" in data.point_data:
            tri = frames.Triad(_point(data, "f", 3), _point(data, "s", 3), _point(data, "n", 3))
            a, g, _ = frames.fibers_to_angles(tri, fr)
        else:
            a, g, _ = frames.fibers_to_angles(_point(data, "f", 3), fr)
        return a, g
    if "alpha_deg" in data.point_data and "gamma_deg" in data.point_data:
        return np.radians(_point(data, "alpha_deg", 1)), np.radians(_point(data, "gamma_deg", 1))
    raise ValidationError("mesh carries neither a fiber field 'f' nor 'alpha_deg'/'gamma_deg'")


def cmd_smooth(args, ctx):
    data = _load(args.mesh)
    fr = _frame_of(data, ctx)
    a, g = _angles_of(data, ctx, fr)
    ell = args.ell if args.ell is not None else ctx.cfg["fibers"]["ell_mm"][0] * 1e-3
    if args.ell is not None:
        ctx.cfg["fibers"]["ell_mm"] = [args.ell * 1e3]
    (a_s, g_s), (ea, eg) = fiberfield.decompose(a, g, ell, data.mesh)
    pd = dict(data.point_data, **_frame_arrays(fr), alpha_s_deg=_deg(a_s), gamma_s_deg=_deg(g_s),
              eps_alpha_deg=_deg(ea), eps_gamma_deg=_deg(eg))
    ctx.write_vtk(args.out, data.mesh, pd, data.cell_data)
    _emit(_kv_lines({"ell_m": ell, "eps_alpha_std_deg": float(_deg(fiberfield.circular_std(ea))),
                     "eps_gamma_std_deg": float(_deg(fiberfield.circular_std(eg)))}))


def _region_groups(data, ctx, mode):
    if mode == "none":
        return None, {}
    side, layers = _layers_and_sides(data, ctx)
    if mode == "ventricles":
        return side, {int(RegionLabel.LV): "LV", int(RegionLabel.RV): "RV"}
    if mode == "layers":
        combo = 10 * side + layers
        names = {}
        for sv, sn in ((RegionLabel.LV, "LV"), (RegionLabel.RV, "RV")):
            for lv, ln in ((1, "endo"), (2, "mid"), (3, "epi")):
                names[int(10 * sv + lv)] = f"{sn}_{ln}"
        return combo, names
    raise ValidationError(f"unknown region mode {mode!r}")


def _disarray_rows(quantities, regions, names, bin_width, weights):
    rows, stats = [], {}
    for qname, theta in quantities.items():
        res = fiberfield.angle_statistics(theta, regions, bin_width, weights)
        for key, st in res.items():
            rname = "all" if key == "all" else names.get(key, str(key))
            for c, n in zip(st["centers_deg"], st["counts"]):
                rows.append((qname, rname, float(c), float(n)))
            stats[f"{qname}.{rname}.mean_deg"] = float(_deg(st["mean"]))
            stats[f"{qname}.{rname}.std_deg"] = float(_deg(st["std"]))
    return rows, stats


def cmd_disarray_stats(args, ctx):
    data = _load(args.mesh)
    bw = args.bin_width if args.bin_width is not None else ctx.cfg["fibers"]["bin_width_deg"]
    ctx.cfg["fibers"]["bin_width_deg"] = bw
    if "eps_alpha_deg" in data.point_data:
        q = {"eps_alpha": np.radians(_point(data, "eps_alpha_deg", 1)),
             "eps_gamma": np.radians(_point(data, "eps_gamma_deg", 1))}
    else:
        fr = _frame_of(data, ctx)
        a, g = _angles_of(data, ctx, fr)
        q = {"alpha": a, "gamma": g}
    regions, names = _region_groups(data, ctx, args.regions)
    rows, stats = _disarray_rows(q, regions, names, bw, data.mesh.node_volumes)
    ctx.write_table(args.out, ("quantity", "region", "bin_center_deg", "count"), rows)
    _emit(_kv_lines(stats))


def _stimuli(args_stim, ctx, mesh):
    entries = args_stim if args_stim else [e for e in ctx.cfg["eikonal"]["stimuli"].split(";") if e.strip()]
    if args_stim:
        ctx.cfg["eikonal"]["stimuli"] = ";".join(args_stim)
    if not entries:
        return [_apex_stimulus(mesh)]
    return [eikonal.Stimulus.parse(e) for e in entries]


def _run_eikonal(mesh, triad, ctx, stim_args=None):
    e = ctx.cfg["eikonal"]
    D = eikonal.build_conductivity(triad, e["sigma_f"], e["sigma_s"], e["sigma_n"], mesh)
    amap = eikonal.solve_eikonal(mesh, D, e["c0"], _stimuli(stim_args, ctx, mesh), tol=e["tol"])
    return amap


def cmd_eikonal(args, ctx):
    e = ctx.cfg["eikonal"]
    for k in ("sigma_f", "sigma_s", "sigma_n", "c0"):
        v = getattr(args, k)
        if v is not None:
            e[k] = v
    if args.isochrone_spacing_ms is not None:
        e["isochrone_spacing_ms"] = args.isochrone_spacing_ms
    data = _load(args.mesh)
    if all(k in data.point_data for k in ("f", "s", "n")):
        triad = frames.Triad(_point(data, "f", 3), _point(data, "s", 3), _point(data, "n", 3))
    else:
        triad = eikonal.uniform_triad(data.mesh.n_nodes)
    amap = _run_eikonal(data.mesh, triad, ctx, args.stim)
    spacing = e["isochrone_spacing_ms"] * 1e-3
    iso = np.floor(amap.times / spacing + 1e-9).astype(np.int64)
    pd = dict(data.point_data, activation_time=amap.times, isochrone_index=iso)
    ctx.write_vtk(args.out, data.mesh, pd, data.cell_data)
    _emit(_kv_lines({"t_min_s": float(amap.times.min()), "t_max_s": float(amap.times.max()),
                     "obtuse_tets": amap.n_obtuse, "iterations": amap.iterations}))


def cmd_strain(args, ctx):
    data = _load(args.displacement)
    d = _point(data, args.field, 3)
    grad = np.stack([recover_gradient(data.mesh, d[:, i]) for i in range(3)], axis=1)
    I1, I2, I3 = tissue.green_lagrange_invariants(grad)
    pd = dict(data.point_data, I1=I1, I2=I2, I3=I3)
    ctx.write_vtk(args.out, data.mesh, pd, data.cell_data)
    _emit(_kv_lines({"I1_max": float(I1.max()), "I3_min": float(I3.min()), "I3_max": float(I3.max())}))


_F_COLS = [f"F{i}{j}" for i in range(1, 4) for j in range(1, 4)]
_TRIAD_COLS = [f"{v}{i}" for v in ("f", "s", "n") for i in range(1, 4)]
_P_COLS = [f"P{i}{j}" for i in range(1, 4) for j in range(1, 4)]
_TABLE_IN = _F_COLS + _TRIAD_COLS + ["Ta", "m_f", "m_s", "m_n"]


def _random_states(n, rng):
    F = np.eye(3) + 0.1 * rng.standard_normal((n, 3, 3))
    J = np.linalg.det(F)
    F = F / np.cbrt(J)[:, None, None] * np.cbrt(rng.uniform(0.8, 1.2, n))[:, None, None]
    Q, R = np.linalg.qr(rng.standard_normal((n, 3, 3)))
    Q = Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    Ta = rng.uniform(0.0, 5e4, n)
    sf = np.tile([1.0, 0.0, 0.0], (n, 1))
    return F, Q, Ta, sf


def cmd_constitutive_table(args, ctx):
    if args.input:
        text = _require_file(args.input).read_text()
        rows = [r for r in csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))]
        missing = [c for c in _TABLE_IN if rows and c not in rows[0]]
        if not rows or missing:
            raise ValidationError(f"constitutive table needs columns {', '.join(missing or _TABLE_IN)}")
        try:
            arr = np.array([[float(r[c]) for c in _TABLE_IN] for r in rows])
        except ValueError as exc:
            raise ValidationError(f"non-numeric entry in {args.input}: {exc}") from None
        F = arr[:, :9].reshape(-1, 3, 3)
        Q = arr[:, 9:18].reshape(-1, 3, 3).transpose(0, 2, 1)
        Ta, sf = arr[:, 18], arr[:, 19:22]
    else:
        if args.random is None or args.random < 1:
            raise ValidationError("give --input CSV or --random N")
        F, Q, Ta, sf = _random_states(args.random, np.random.default_rng(ctx.seed))
    params = ctx.cfg.usyk_params()
    W = tissue.usyk_energy(F, Q, params)
    P = tissue.passive_piola(F, Q, params)
    for k in range(len(F)):
        P[k] += tissue.active_piola(F[k], Q[k], Ta[k], tuple(sf[k]))
    out = []
    for k in range(len(F)):
        out.append(list(F[k].ravel()) + list(Q[k].T.ravel()) + [Ta[k], *sf[k]]
                   + list(P[k].ravel()) + [W[k]])
    ctx.write_table(args.out, _TABLE_IN + _P_COLS + ["W"], out)
    _emit(_kv_lines({"rows": len(F)}))


_CHAMBER_FLOWS = {"LA": (7, 0), "LV": (0, 1), "RA": (5, 2), "RV": (2, 3)}  # (in, out) flow columns


def _circ_rows(res):
    rows = []
    for k, t in enumerate(res.t):
        for i, c in enumerate(circ0d.CHAMBERS):
            qi, qo = _CHAMBER_FLOWS[c]
            rows.append((float(t), c, res.volumes[k, i], res.pressures[k, i],
                         res.flows[k, qi], res.flows[k, qo]))
    return rows


def _run_circ(ctx):
    c = ctx.cfg["circulation"]
    params = ctx.cfg.circulation_params()
    res = circ0d.simulate(params, n_beats=c["beats"], dt=c["dt"], output_stride=c["output_stride"])
    summary = {}
    for ch in ("LV", "RV"):
        for k, v in res.qois(ch)._asdict().items():
            summary[f"{ch}.{k}"] = v
    summary["limit_cycle_metric"] = res.limit_cycle_metric()
    summary["volume_drift_per_beat"] = res.volume_drift_per_beat()
    return res, summary


def cmd_circ(args, ctx):
    c = ctx.cfg["circulation"]
    if args.beats is not None:
        c["beats"] = args.beats
    if args.stride is not None:
        c["output_stride"] = args.stride
    res, summary = _run_circ(ctx)
    ctx.write_table(args.out, ("t_s", "chamber", "V_mL", "P_mmHg", "q_in_mL_s", "q_out_mL_s"),
                    _circ_rows(res))
    lines = ["[qoi]"] + _kv_lines(summary)
    ctx.write_text(args.summary or str(args.out) + ".qoi.txt", lines)
    _emit(lines)


def _read_loop(path, chamber):
    text = _require_file(path, "loop").read_text()
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    sel = [r for r in rows if r.get("chamber") == chamber]
    if not sel:
        raise ValidationError(f"no samples for chamber {chamber!r} in {path}")
    try:
        t = np.array([float(r["t_s"]) for r in sel])
        V = np.array([float(r["V_mL"]) for r in sel])
        P = np.array([float(r["P_mmHg"]) for r in sel])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"loop file {path} lacks numeric t_s/V_mL/P_mmHg columns ({exc})") from None
    return t, V, P


def cmd_emulator(args, ctx):
    period = args.period if args.period is not None else ctx.cfg["circulation"]["T_HB"]
    t, V, P = _read_loop(args.loop, args.chamber)
    if args.beats is not None:
        keep = t >= t[-1] - args.beats * period - 1e-12
        t, V, P = t[keep], V[keep], P[keep]
    fit = circ0d.emulator_fit(t, V, P, period)
    ctx.write_json(args.out, {"chamber": args.chamber, "emulator": fit.to_dict()})
    _emit(_kv_lines({"a": fit.a, "b": fit.b, "V0_ed": fit.V0_ed, "E_es": fit.E_es, "V0_es": fit.V0_es}))


def _read_emulator(path):
    try:
        d = json.loads(_require_file(path, "emulator").read_text())
        return circ0d.EmulatorFit.from_dict(d["emulator"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"malformed emulator file {path}: {exc}") from None


def _parse_targets(text):
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        if "=" not in item:
            raise ValidationError(f"--target expects KEY=value pairs, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ValidationError(f"target {k!r} is not a number") from None
    return out


def cmd_calibrate_axb(args, ctx):
    pA, pB = _read_emulator(args.emulator_a), _read_emulator(args.emulator_b)
    target = _parse_targets(args.target)
    bounds = None
    if args.bounds:
        lo, hi = (float(v) for v in args.bounds.split(","))
        bounds = (lo, hi)
    params = ctx.cfg.circulation_params()
    a, obj = circ0d.calibrate_axb(target, pA, pB, args.a_a, args.a_b, bounds=bounds,
                                  params=params, n_beats=args.beats, dt=ctx.cfg["circulation"]["dt"])
    lines = _kv_lines({"a_xb": a, "objective": obj})
    ctx.write_text(args.out, lines)
    _emit(lines)


def cmd_pipeline(args, ctx):
    cfg = ctx.cfg
    out = Path(args.out_dir or cfg["general"]["output_dir"])
    cfg["general"]["output_dir"] = str(out)
    g = cfg["geometry"]
    summary = {}
    if g["mesh"]:
        mesh = _load(g["mesh"]).mesh
    else:
        mesh = generate_idealized_biventricle(target_edge_length=g["edge_length_mm"] * 1e-3,
                                              base_cut_height=g["base_cut_height_mm"] * 1e-3)
    summary.update(nodes=mesh.n_nodes, tets=mesh.n_tets)
    pd, triad, fr = _ldrbm_fields(mesh, ctx)
    summary["frame_repaired_nodes"] = fr.n_repaired

    f = cfg["fibers"]
    ka = fiberfield.kappa_for_std(np.radians(f["alpha_std_deg"]))
    kg = fiberfield.kappa_for_std(np.radians(f["gamma_std_deg"]))
    noisy = fiberfield.synthesize_disarray(triad, fr, ka, kg, seed=ctx.seed,
                                           outlier_fraction=f["outlier_fraction"])
    pd.update(f_measured=noisy.f)
    a, gm, _ = frames.fibers_to_angles(noisy.f, fr)
    side, layers = ldrbm.layers_from_phi(mesh, pd["phi"])
    regions = 10 * side + layers
    names = {int(10 * sv + lv): f"{sn}_{ln}" for sv, sn in ((RegionLabel.LV, "LV"), (RegionLabel.RV, "RV"))
             for lv, ln in ((1, "endo"), (2, "mid"), (3, "epi"))}
    hist_rows = []
    a_true, g_true = frames.canonicalize(*frames.fibers_to_angles(triad.f, fr)[:2])
    for ell_mm in f["ell_mm"]:
        ell = ell_mm * 1e-3
        (a_s, g_s), (ea, eg) = fiberfield.decompose(a, gm, ell, mesh)
        tag = f"ell{ell_mm:g}mm"
        pd[f"alpha_s_deg_{tag}"] = _deg(a_s)
        pd[f"gamma_s_deg_{tag}"] = _deg(g_s)
        rows, stats = _disarray_rows({"eps_alpha": ea, "eps_gamma": eg}, regions, names,
                                     f["bin_width_deg"], mesh.node_volumes)
        hist_rows.extend((tag,) + r for r in rows)
        summary[f"{tag}.eps_alpha_std_deg"] = stats["eps_alpha.all.std_deg"]
        summary[f"{tag}.eps_gamma_std_deg"] = stats["eps_gamma.all.std_deg"]
        mad = np.abs(frames.wrap_half_pi(a_s - a_true))
        summary[f"{tag}.alpha_mad_to_truth_deg"] = float(_deg(np.average(mad, weights=mesh.node_volumes)))
        sm = frames.angles_to_fibers(a_s, g_s, 0.0, fr)
        ps = fiberfield.projection_stats(noisy.f, sm, weights=mesh.node_volumes)
        for k, v in zip(("ff", "fs", "fn"), ps.as_tuple()):
            summary[f"{tag}.projection_{k}"] = v

    amap = _run_eikonal(mesh, triad, ctx)
    pd["activation_time"] = amap.times
    summary["activation_t_max_s"] = float(amap.times.max())
    res, circ_summary = _run_circ(ctx)
    summary.update({f"circ.{k}": v for k, v in circ_summary.items()})

    ctx.write_vtk(out / "mesh.vtk", mesh, pd)
    ctx.write_table(out / "disarray_hist.csv",
                    ("ell", "quantity", "region", "bin_center_deg", "count"), hist_rows)
    ctx.write_table(out / "loop.csv", ("t_s", "chamber", "V_mL", "P_mmHg", "q_in_mL_s", "q_out_mL_s"),
                    _circ_rows(res))
    ctx.write_table(out / "summary.csv", ("key", "value"), list(summary.items()))
    _emit(_kv_lines(summary))


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="fiberkit", description="Myocardial fiber, eikonal and circulation toolkit.")
    p.add_argument("--version", action="version", version=f"fiberkit {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI configuration file (defaults: baseline parameters)")
    common.add_argument("--seed", type=int, help="random seed (overrides general.seed)")
    common.add_argument("--threads", type=int,
                        help="BLAS/OpenMP threads; env FIBERKIT_THREADS; 0 = all cores")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("mesh", cmd_mesh, "generate the idealized labeled biventricle")
    sp.add_argument("--h-mm", dest="h_mm", type=float, help="grid spacing in mm")
    sp.add_argument("--out", required=True)

    sp = add("laplace", cmd_laplace, "solve Laplace problems (default: phi and psi)")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--bc", action="append", default=[], help="LABEL=value, repeatable")
    sp.add_argument("--name", default="u", help="array name for a custom --bc solve")
    sp.add_argument("--out", required=True)

    sp = add("frames", cmd_frames, "local myocardial frames e_l, e_t, e_n")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--out", required=True)

    sp = add("ldrbm", cmd_ldrbm, "rule-based fiber field (angles in degrees)")
    sp.add_argument("--mesh", required=True)
    for name in _ANGLE_ARGS:
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    sp.add_argument("--out", required=True)

    sp = add("smooth", cmd_smooth, "Helmholtz-smooth the fiber angles")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--ell", type=float, help="filter length in meters")
    sp.add_argument("--out", required=True)

    sp = add("disarray-stats", cmd_disarray_stats, "angle histograms and circular statistics")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--regions", choices=("none", "ventricles", "layers"), default="none")
    sp.add_argument("--bin-width", dest="bin_width", type=float)
    sp.add_argument("--out", required=True)

    sp = add("eikonal", cmd_eikonal, "anisotropic eikonal activation times")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--sigma-f", dest="sigma_f", type=float)
    sp.add_argument("--sigma-s", dest="sigma_s", type=float)
    sp.add_argument("--sigma-n", dest="sigma_n", type=float)
    sp.add_argument("--c0", type=float)
    sp.add_argument("--stim", action="append", help="x,y,z,r,t (m, s); repeatable")
    sp.add_argument("--isochrone-spacing-ms", dest="isochrone_spacing_ms", type=float)
    sp.add_argument("--out", required=True)

    sp = add("strain", cmd_strain, "Green-Lagrange invariants from a displacement field")
    sp.add_argument("--displacement", required=True, help="VTK mesh with a 3-component point array")
    sp.add_argument("--field", default="displacement")
    sp.add_argument("--out", required=True)

    sp = add("constitutive-table", cmd_constitutive_table, "batch stress/energy evaluation to CSV")
    sp.add_argument("--input", help="CSV with columns " + ",".join(_TABLE_IN))
    sp.add_argument("--random", type=int, help="generate N random states instead")
    sp.add_argument("--out", required=True)

    sp = add("circ", cmd_circ, "closed-loop 0D circulation")
    sp.add_argument("--params", dest="params", help="alias of --config")
    sp.add_argument("--beats", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--summary", help="QoI summary path (default <out>.qoi.txt)")

    sp = add("emulator", cmd_emulator, "fit the PV-loop emulator to a circ loop CSV")
    sp.add_argument("--loop", required=True)
    sp.add_argument("--chamber", default="LV", choices=circ0d.CHAMBERS)
    sp.add_argument("--period", type=float)
    sp.add_argument("--beats", type=int, help="use only the last N beats")
    sp.add_argument("--out", required=True)

    sp = add("calibrate-axb", cmd_calibrate_axb, "calibrate a_XB with the parametric emulator")
    sp.add_argument("--emulator-a", required=True)
    sp.add_argument("--a-a", dest="a_a", type=float, required=True)
    sp.add_argument("--emulator-b", required=True)
    sp.add_argument("--a-b", dest="a_b", type=float, required=True)
    sp.add_argument("--target", required=True, help="e.g. EDV=0.045,ESV=0.02")
    sp.add_argument("--bounds", help="lo,hi (default: a_A,a_B)")
    sp.add_argument("--beats", type=int, default=10)
    sp.add_argument("--out", required=True)

    sp = add("pipeline", cmd_pipeline, "mesh -> fibers -> disarray sweep -> eikonal -> circulation")
    sp.add_argument("--out-dir", dest="out_dir")
    return p


def _resolve_config(args):
    path = getattr(args, "params", None) or args.config
    cfg = parse_config(path) if path else defaults()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(["seed must be >= 0"])
        cfg["general"]["seed"] = args.seed
    threads = args.threads
    if threads is None and os.environ.get("FIBERKIT_THREADS"):
        try:
            threads = int(os.environ["FIBERKIT_THREADS"])
        except ValueError:
            raise ConfigError([f"FIBERKIT_THREADS must be an integer, got {os.environ['FIBERKIT_THREADS']!r}"]) from None
    if threads is not None:
        if threads < 0:
            raise ConfigError(["threads must be >= 0"])
        cfg["general"]["threads"] = threads
    return cfg


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    ctx = None
    try:
        cfg = _resolve_config(args)
        ctx = Context(cfg, args.command)
        with _set_threads(cfg["general"]["threads"]):
            args.func(args, ctx)
        return EXIT_OK
    except _USAGE_ERRORS as exc:
        code, msg = EXIT_USAGE, exc
    except (FiberkitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code, msg = EXIT_NUMERIC, exc
    if ctx is not None:
        ctx.cleanup()
    print(f"fiberkit {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
