"""Config document parsing (TOML) and the small emitter for round-trips.

Schema (all lengths mm, pressures MPa, times s; see docs/finger.toml for a
fully annotated example):

    [material]  preset = "ninjaflex" | explicit constants
    [finger]    heights, t, u_l, u_sep, t_lim, uc, t_ch, r_b?, w_ch?, t_mid?
    [lattice]   optional BuildOptions overrides
    [simulation] pressure, tau1, tau2, release, t_end, dt_out, rtol?, atol?
    [map]       h_range, t_range, h_steps, t_steps
    [fit]       target, max_degree, interaction_degree, lambda, cv_folds,
                train_fraction
    [problem]   variant, target, weights, budget, segments, object_sizes?,
                target_rt?
    [space]     bound overrides
    [rt]        pressure profile pair for dynamic_reset
    [fixed]     fixed geometry for dynamic_reset
"""

from __future__ import annotations

import hashlib
import math
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .geometry import MATERIAL_PRESETS, FingerGeometry, MaterialProps, make_finger
from .lattice import BuildOptions
from .dynamics import PressureProfile
from .inverse import DesignSpace, Objective


def load_document(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as ex:
        raise ConfigError(f"malformed config {p}: {ex}") from ex


def config_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing field '{key}' in [{where}]")
    return section[key]


def parse_material(doc: dict) -> MaterialProps:
    sec = doc.get("material")
    if sec is None:
        raise ConfigError("missing [material] section")
    if "preset" in sec:
        name = str(sec["preset"]).lower()
        if name not in MATERIAL_PRESETS:
            raise ConfigError(
                f"unknown material preset '{name}' (have {sorted(MATERIAL_PRESETS)})")
        base = MATERIAL_PRESETS[name]
        fields = {k: sec.get(k, getattr(base, k)) for k in (
            "youngs_modulus", "poisson_ratio", "density", "eta_internal", "eta_isotropic")}
        return MaterialProps(**fields)
    try:
        return MaterialProps(
            youngs_modulus=float(_require(sec, "youngs_modulus", "material")),
            poisson_ratio=float(sec.get("poisson_ratio", 0.45)),
            density=float(sec.get("density", 1.2e-9)),
            eta_internal=float(sec.get("eta_internal", 0.05)),
            eta_isotropic=float(sec.get("eta_isotropic", 1e-3)),
        )
    except (TypeError, ValueError) as ex:
        raise ConfigError(f"bad [material] value: {ex}") from ex


def parse_finger(doc: dict) -> FingerGeometry:
    sec = doc.get("finger")
    if sec is None:
        raise ConfigError("missing [finger] section")
    material = parse_material(doc)
    heights = _require(sec, "heights", "finger")
    if isinstance(heights, (int, float)):
        heights = [heights]
    kwargs = dict(
        dome_thickness=float(_require(sec, "t", "finger")),
        unit_cell_size=float(sec.get("uc", 15.0)),
        unit_length=sec.get("u_l", 7.0),
        unit_separation=sec.get("u_sep", 1.0),
        chamber_thickness=float(sec.get("t_ch", 1.0)),
        limiting_layer_thickness=float(_require(sec, "t_lim", "finger")),
    )
    if "r_b" in sec:
        kwargs["dome_base_radius"] = float(sec["r_b"])
    if "w_ch" in sec:
        kwargs["channel_width"] = float(sec["w_ch"])
    if "t_mid" in sec:
        kwargs["mid_thickness"] = float(sec["t_mid"])
    try:
        return make_finger(heights, material, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as ex:
        raise ConfigError(f"bad [finger] value: {ex}") from ex


def parse_build_options(doc: dict) -> BuildOptions:
    sec = doc.get("lattice", {})
    kwargs = {}
    for key in ("pitch_mode", "torsion_attachment", "torsion_hinge",
                "mast_height_mode", "tip_at"):
        if key in sec:
            kwargs[key] = str(sec[key])
    for key in ("end_wall_torsion",):
        if key in sec:
            kwargs[key] = bool(sec[key])
    for key in ("rigid_factor", "mass_scale", "kb_relax_tau", "kb_relax_depth",
                "mast_height_override"):
        if key in sec:
            kwargs[key] = float(sec[key])
    try:
        return BuildOptions(**kwargs)
    except ValueError as ex:
        raise ConfigError(f"bad [lattice] value: {ex}") from ex


def parse_profile(doc: dict, section: str = "simulation") -> tuple[PressureProfile, float, float]:
    """Returns (profile, t_end, dt_out)."""
    sec = doc.get(section)
    if sec is None:
        raise ConfigError(f"missing [{section}] section")
    t_end = float(sec.get("t_end", 2.0))
    dt_out = float(sec.get("dt_out", 1e-3))
    if "times" in sec or "pressures" in sec:
        prof = PressureProfile(tuple(sec["times"]), tuple(sec["pressures"]))
    else:
        p = float(_require(sec, "pressure", section))
        if p == 0.0:
            prof = PressureProfile.zero()
        else:
            prof = PressureProfile.ramp_hold_release(
                p, float(sec.get("tau1", 0.3)), float(sec.get("tau2", 0.4)),
                float(sec.get("release", 0.05)))
    return prof, t_end, dt_out


def parse_space(doc: dict) -> DesignSpace:
    sec = doc.get("space", {})
    kwargs = {}
    pairs = {"h": "h_bounds", "u_sep": "u_sep_bounds", "u_l": "u_l_bounds",
             "t": "t_bounds", "t_lim": "t_lim_bounds", "base_l": "base_l_bounds"}
    for key, attr in pairs.items():
        if key in sec:
            lo, hi = sec[key]
            kwargs[attr] = (float(lo), float(hi))
    if "theta_b_deg" in sec:
        lo, hi = sec["theta_b_deg"]
        kwargs["theta_b_bounds"] = (math.radians(float(lo)), math.radians(float(hi)))
    if "max_segments" in sec:
        kwargs["max_segments"] = int(sec["max_segments"])
    if "metastable_band" in sec:
        lo, hi = sec["metastable_band"]
        kwargs["metastable_band"] = (float(lo), float(hi))
    return DesignSpace(**kwargs)


def parse_problem(doc: dict, build_options: BuildOptions) -> tuple[Objective, DesignSpace, dict]:
    """Objective + space + run settings (budget, segments) from a problem doc."""
    sec = doc.get("problem")
    if sec is None:
        raise ConfigError("missing [problem] section")
    material = parse_material(doc)
    variant = str(_require(sec, "variant", "problem"))
    kwargs: dict = {"variant": variant, "material": material,
                    "build_options": build_options}
    if "target" in sec:
        t = sec["target"]
        if not (isinstance(t, list) and len(t) == 2):
            raise ConfigError("problem.target must be [x, y]")
        kwargs["target_xy"] = (float(t[0]), float(t[1]))
    if "weights" in sec:
        kwargs["weights"] = tuple(float(w) for w in sec["weights"])
    if "object_sizes" in sec:
        kwargs["object_sizes"] = tuple(float(s) for s in sec["object_sizes"])
    if "target_rt" in sec:
        kwargs["target_rt"] = float(sec["target_rt"])
    fixed = doc.get("fixed", {})
    if "heights" in fixed:
        kwargs["fixed_heights"] = tuple(float(h) for h in fixed["heights"])
    for src, dst in (("n_metastable", "n_metastable"), ("u_sep", "fixed_u_sep"),
                     ("u_l", "fixed_u_l"), ("t_lim", "fixed_t_lim")):
        if src in fixed:
            kwargs[dst] = (int if src == "n_metastable" else float)(fixed[src])
    if variant == "dynamic_reset":
        rt = doc.get("rt")
        if rt is None:
            raise ConfigError("dynamic_reset needs an [rt] section with two hold times")
        p = float(_require(rt, "pressure", "rt"))
        tau1 = float(rt.get("tau1", 0.3))
        h1 = float(_require(rt, "hold1", "rt"))
        h2 = float(_require(rt, "hold2", "rt"))
        rel = float(rt.get("release", 0.05))
        kwargs["rt_profiles"] = (
            PressureProfile.ramp_hold_release(p, tau1, h1, rel),
            PressureProfile.ramp_hold_release(p, tau1, h2, rel))
        kwargs["sim_t_end"] = float(rt.get("t_end", 6.0))

    run = {
        "budget": int(sec.get("budget", 200)),
        "segments": sec.get("segments", [1, 8]),
    }
    return Objective(**kwargs), parse_space(doc), run


def emit_finger_config(finger: FingerGeometry, extra: dict | None = None) -> str:
    """Round-trippable TOML for a geometry (parses back through parse_finger)."""
    u0 = finger.units[0]
    mat = finger.material
    lines = [
        "[material]",
        f"youngs_modulus = {mat.youngs_modulus:.10g}",
        f"poisson_ratio = {mat.poisson_ratio:.10g}",
        f"density = {mat.density:.10g}",
        f"eta_internal = {mat.eta_internal:.10g}",
        f"eta_isotropic = {mat.eta_isotropic:.10g}",
        "",
        "[finger]",
        "heights = [" + ", ".join(f"{u.dome_height:.10g}" for u in finger.units) + "]",
        f"t = {u0.dome_thickness:.10g}",
        "u_l = [" + ", ".join(f"{u.unit_length:.10g}" for u in finger.units) + "]",
        "u_sep = [" + ", ".join(f"{u.unit_separation:.10g}" for u in finger.units) + "]",
        f"t_lim = {u0.limiting_layer_thickness:.10g}",
        f"uc = {u0.unit_cell_size:.10g}",
        f"t_ch = {u0.chamber_thickness:.10g}",
        f"r_b = {u0.dome_base_radius:.10g}",
        f"w_ch = {u0.channel_width:.10g}",
    ]
    if extra:
        lines.append("")
        lines.append("[design]")
        for k, v in extra.items():
            if isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {v:.10g}" if isinstance(v, float) else f"{k} = {v}")
    return "\n".join(lines) + "\n"
