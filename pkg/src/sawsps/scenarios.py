"""Reproducible experiment presets wired end to end.

Every scenario is defined by a JSON-serializable config (explicit units in
key names) plus a master seed; running one writes CSV/PGM outputs and a
manifest with content hashes.  Identical (config, seed) produce byte-identical
outputs regardless of worker thread count: all randomness flows through
counter-based substreams keyed by fixed block indices.
"""

import hashlib
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (expected_emission_trace, g2_histogram,
                       onset_delay_curve, powerlaw_exponent)
from .cascade import CascadeModel, PumpSpec, time_integrated_intensity
from .detector import (Irf, TransitionSpectrum, convolve_irf, render_pl_image,
                       render_spatial_spectral, write_axes_csv, write_pgm,
                       write_transient_csv)
from .emitter import sample_start_levels, write_photon_csv
from .rng import substream
from .transport import (ChannelLayout, LaserSpot, QdSite, SawWave,
                        per_cycle_emission_times, run_device,
                        uniform_site_field)


class ConfigError(ValueError):
    """Invalid scenario configuration (reported with the offending key path)."""


DEFAULT_SEED = 12345

_CASCADE_DEFAULTS = {"lifetimes_ns": [1.5, 1.4, 0.9],
                     "labels": ["1X", "2X", "3X"]}

_PRESETS: dict[str, dict] = {
    "fig3_power_series": {
        "description": "Photons per pulse vs pump for every transition: "
                       "model curve, Monte Carlo points and low-pump "
                       "power-law exponents.",
        "params": {
            "cascade": dict(_CASCADE_DEFAULTS),
            "g_values": [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            "mc_pulses_per_point": 1000000,
            "powerlaw_g_max": 0.1,
        },
    },
    "fig4_transients": {
        "description": "Time-resolved emission traces of each transition at "
                       "three pump levels, raw and IRF-convolved.",
        "params": {
            "cascade": dict(_CASCADE_DEFAULTS),
            "g_values": [0.2, 0.7, 1.9],
            "irf_fwhm_ns": 0.35,
            "horizon_ns": 12.0,
            "step_ns": 0.02,
        },
    },
    "fig4c_delays": {
        "description": "Onset and mean emission delay of every transition "
                       "versus pump strength.",
        "params": {
            "cascade": dict(_CASCADE_DEFAULTS),
            "g_values": [0.05, 0.1, 0.2, 0.4, 0.7, 1.0, 1.9, 3.0, 5.0, 10.0,
                         20.0],
            "onset_threshold": 0.1,
        },
    },
    "fig5_ensemble": {
        "description": "Acoustic pumping of a dot field with finite carrier "
                       "pockets: upstream depletion image and statistics.",
        "params": {
            "cascade": {"lifetimes_ns": [1.5], "labels": ["1X"]},
            "saw": {"frequency_mhz": 193.0, "wavelength_um": 15.0,
                    "amplitude": 1.0, "direction": 1},
            "field": {"density_per_um2": 30.0,
                      "extent_um": [[0.0, 10.0], [-5.0, 5.0]],
                      "capture_radius_um": 0.05, "capture_prob": 0.2},
            "spot": {"center_um": -12.0, "radius_um": 1.5,
                     "pairs_per_pulse": 75.0},
            "channel_extent_um": [-20.0, 12.0],
            "num_pulses": 200,
            "pulses_per_saw_cycle": 1.0,
            "image": {"psf_sigma_um": 0.4, "pixel_um": 0.25},
            "write_photons": False,
        },
    },
    "fig7_remote": {
        "description": "Remote pumping of individual posts 7 and 14 um from "
                       "the spot: CCD frames without SAW and for both "
                       "propagation directions.",
        "params": {
            "cascade": dict(_CASCADE_DEFAULTS),
            "saw": {"frequency_mhz": 193.0, "wavelength_um": 15.0,
                    "amplitude": 1.0},
            "sites": {"positions_um": [0.0, -7.0, -14.0],
                      "capture_radius_um": 0.5, "capture_prob": 0.5},
            "spot": {"center_um": 0.0, "radius_um": 1.0,
                     "pairs_per_pulse": 2.0},
            "channel_extent_um": [-20.0, 6.0],
            "num_pulses": 2000,
            "emitter_shifts_nm": {"1": 1.6, "2": -2.4},
            "frame": {"row_extent_um": [-16.0, 4.0], "row_bin_um": 0.5,
                      "col_extent_nm": [858.0, 884.0], "col_bin_nm": 0.2},
            "write_photons": True,
        },
    },
    "g2_antibunching": {
        "description": "Pulsed second-order correlation of a capacity-1 site "
                       "injected once per SAW cycle.",
        "params": {
            "saw": {"frequency_mhz": 193.0, "wavelength_um": 15.0},
            "site": {"capture_prob": 0.5, "lifetime_ns": 0.5},
            "num_cycles": 2000000,
            "g2_bin_ns": 0.1,
            "g2_periods": 10.5,
        },
    },
}

_G2_BLOCKS = 64
_MC_BLOCKS = 16


@dataclass(frozen=True)
class ScenarioConfig:
    """A named preset plus validated overrides and the master seed."""

    name: str
    master_seed: int
    params: dict

    @classmethod
    def preset(cls, name: str, overrides: dict | None = None,
               master_seed: int = DEFAULT_SEED) -> "ScenarioConfig":
        if name not in _PRESETS:
            raise ConfigError(f"unknown scenario '{name}'; "
                              f"known: {', '.join(_PRESETS)}")
        if not isinstance(master_seed, int) or master_seed < 0:
            raise ConfigError("master_seed must be a non-negative integer")
        params = _merge(_PRESETS[name]["params"], overrides or {}, f"{name}.")
        return cls(name=name, master_seed=master_seed, params=params)

    def to_dict(self) -> dict:
        return {"scenario": self.name, "master_seed": self.master_seed,
                "params": self.params}

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        unknown = set(data) - {"scenario", "master_seed", "params"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "scenario" not in data:
            raise ConfigError("config needs a 'scenario' name")
        return cls.preset(data["scenario"], data.get("params"),
                          data.get("master_seed", DEFAULT_SEED))


def _merge(defaults: dict, overrides: dict, path: str) -> dict:
    out = {k: v for k, v in defaults.items()}
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path[:-1]}: expected a mapping")
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key '{path}{key}'")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def list_scenarios() -> list[tuple[str, str]]:
    """Stable ordered listing of preset names and descriptions."""
    return [(name, entry["description"]) for name, entry in _PRESETS.items()]


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) \
        else str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\r\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _map_blocks(func, num_blocks: int, threads: int) -> list:
    """Run block workers in index order; results independent of threads
    because every block owns a substream keyed by its index."""
    if threads <= 1:
        return [func(b) for b in range(num_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, range(num_blocks)))


def _block_sizes(total: int, blocks: int) -> list[int]:
    base = total // blocks
    sizes = [base] * blocks
    sizes[-1] += total - base * blocks
    return sizes


# ---------------------------------------------------------------------------
# Scenario runners
# ---------------------------------------------------------------------------

def _cascade_from(params: dict) -> CascadeModel:
    try:
        return CascadeModel(tuple(params["lifetimes_ns"]),
                            tuple(params.get("labels") or ()))
    except ValueError as err:
        raise ConfigError(f"cascade: {err}") from err


def _saw_from(params: dict) -> SawWave:
    try:
        return SawWave(**params)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"saw: {err}") from err


def _run_fig3(cfg: ScenarioConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    model = _cascade_from(p["cascade"])
    g_values = [float(g) for g in p["g_values"]]
    if not g_values or any(g <= 0 for g in g_values):
        raise ConfigError("g_values: need positive pump values")
    pulses = int(p["mc_pulses_per_point"])
    nlev = model.num_levels

    def mc_counts(gi: int) -> np.ndarray:
        g = g_values[gi]
        sizes = _block_sizes(pulses, _MC_BLOCKS)

        def block(b: int) -> np.ndarray:
            rng = substream(cfg.master_seed, 10 + gi, b)
            levels = sample_start_levels(g, sizes[b], nlev, rng)
            return np.array([np.sum(levels >= i) for i in range(1, nlev + 1)])

        return np.sum(_map_blocks(block, _MC_BLOCKS, threads), axis=0)

    rows = []
    mc_rates = []
    for gi, g in enumerate(g_values):
        counts = mc_counts(gi)
        rate = counts / pulses
        mc_rates.append(rate)
        model_vals = [time_integrated_intensity(model, g, i)
                      for i in range(1, nlev + 1)]
        rows.append([g, *model_vals, *rate])
    header = (["g"] + [f"model_{lab}" for lab in model.labels]
              + [f"mc_{lab}" for lab in model.labels])
    _write_csv(out / "intensity_vs_g.csv", header, rows)

    g_max = float(p["powerlaw_g_max"])
    sel = [i for i, g in enumerate(g_values) if g <= g_max]
    slope_rows = []
    for level in range(1, nlev + 1):
        xs = [g_values[i] for i in sel]
        ys = [mc_rates[i][level - 1] for i in sel]
        if len(xs) >= 3 and all(y > 0 for y in ys):
            fit = powerlaw_exponent(xs, ys)
            slope_rows.append([model.labels[level - 1], fit.slope, fit.stderr])
    _write_csv(out / "powerlaw.csv", ["transition", "slope", "stderr"],
               slope_rows)
    return ["intensity_vs_g.csv", "powerlaw.csv"]


def _run_fig4(cfg: ScenarioConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    model = _cascade_from(p["cascade"])
    irf = Irf(float(p["irf_fwhm_ns"]))
    step = float(p["step_ns"])
    horizon = float(p["horizon_ns"])
    if step <= 0 or horizon <= step:
        raise ConfigError("horizon_ns/step_ns: need horizon > step > 0")
    grid = np.arange(0.0, horizon, step)
    files = []
    for g in p["g_values"]:
        g = float(g)
        for level, label in enumerate(model.labels, start=1):
            trace = expected_emission_trace(model, g, level, grid)
            name = f"transient_g{g:g}_{label}.csv"
            write_transient_csv(out / name, trace)
            files.append(name)
            blurred = convolve_irf(trace, irf)
            name = f"transient_g{g:g}_{label}_irf.csv"
            write_transient_csv(out / name, blurred)
            files.append(name)
    return files


def _run_fig4c(cfg: ScenarioConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    model = _cascade_from(p["cascade"])
    curve = onset_delay_curve(model, [float(g) for g in p["g_values"]],
                              threshold_fraction=float(p["onset_threshold"]))
    header = (["g"] + [f"onset_{lab}" for lab in model.labels]
              + [f"mean_{lab}" for lab in model.labels])
    rows = [[g, *curve.onset_ns[i], *curve.mean_time_ns[i]]
            for i, g in enumerate(curve.g_values)]
    _write_csv(out / "delays.csv", header, rows)
    return ["delays.csv"]


def _run_fig5(cfg: ScenarioConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    model = _cascade_from(p["cascade"])
    saw = _saw_from(p["saw"])
    f = p["field"]
    (fx0, fx1), (fy0, fy1) = [tuple(map(float, pair))
                              for pair in f["extent_um"]]
    sites = uniform_site_field(float(f["density_per_um2"]),
                               ((fx0, fx1), (fy0, fy1)), model,
                               float(f["capture_radius_um"]),
                               float(f["capture_prob"]),
                               substream(cfg.master_seed, 99))
    spot = LaserSpot(float(p["spot"]["center_um"]),
                     float(p["spot"]["radius_um"]),
                     float(p["spot"]["pairs_per_pulse"]))
    layout = ChannelLayout(tuple(map(float, p["channel_extent_um"])), spot,
                           tuple(sites))
    period = saw.period_ns / float(p["pulses_per_saw_cycle"])
    num_pulses = int(p["num_pulses"])
    pump = PumpSpec(1.0, period, num_pulses)
    travel = (max(fx1, layout.extent_um[1]) - spot.center_um) \
        / saw.velocity_um_per_ns
    duration = num_pulses * period + travel + 20.0 * max(model.lifetimes_ns)
    result = run_device(layout, saw, pump, duration, cfg.master_seed)

    per_site = {s.site_id: 0 for s in sites}
    for r in result.photons:
        per_site[r.emitter_id] += 1
    pos = {s.site_id: (s.position_um, s.y_um) for s in sites}
    rows = [[sid, pos[sid][0], pos[sid][1], per_site[sid]]
            for sid in sorted(per_site)]
    _write_csv(out / "site_emission.csv",
               ["site_id", "x_um", "y_um", "photons"], rows)

    counts = np.array([per_site[sid] for sid in sorted(per_site)], dtype=float)
    xs = np.array([pos[sid][0] for sid in sorted(per_site)])
    total = counts.sum()
    mid = 0.5 * (fx0 + fx1)
    upstream = xs < mid if saw.direction > 0 else xs > mid
    upstream_fraction = float(counts[upstream].sum() / total) if total else 0.0
    illuminated = float(total ** 2 / (counts.size * np.sum(counts ** 2))) \
        if total else 0.0
    _write_csv(out / "depletion_stats.csv",
               ["total_photons", "num_sites", "upstream_fraction",
                "illuminated_fraction"],
               [[int(total), counts.size, upstream_fraction, illuminated]])

    image = render_pl_image(result.photons, float(p["image"]["psf_sigma_um"]),
                            float(p["image"]["pixel_um"]),
                            ((fx0, fx1), (fy0, fy1)))
    write_pgm(out / "pl_image.pgm", image.intensity)
    write_axes_csv(out / "pl_image_axes.csv",
                   0.5 * (image.y_edges_um[:-1] + image.y_edges_um[1:]),
                   0.5 * (image.x_edges_um[:-1] + image.x_edges_um[1:]),
                   row_name="row_center_um", col_name="col_center_um")
    files = ["site_emission.csv", "depletion_stats.csv", "pl_image.pgm",
             "pl_image_axes.csv"]
    if p["write_photons"]:
        write_photon_csv(out / "photons.csv", result.photons)
        files.append("photons.csv")
    return files


def _run_fig7(cfg: ScenarioConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    model = _cascade_from(p["cascade"])
    sp = p["sites"]
    spot = LaserSpot(float(p["spot"]["center_um"]),
                     float(p["spot"]["radius_um"]),
                     float(p["spot"]["pairs_per_pulse"]))
    sites = tuple(QdSite(i, float(x), float(sp["capture_radius_um"]),
                         float(sp["capture_prob"]), model)
                  for i, x in enumerate(sp["positions_um"]))
    layout = ChannelLayout(tuple(map(float, p["channel_extent_um"])), spot,
                           sites)
    shifts = {int(k): float(v) for k, v in p["emitter_shifts_nm"].items()}
    spectrum = TransitionSpectrum.default().with_emitter_shifts(shifts)
    fr = p["frame"]
    row_edges = np.arange(fr["row_extent_um"][0],
                          fr["row_extent_um"][1] + fr["row_bin_um"] / 2,
                          fr["row_bin_um"])
    col_edges = np.arange(fr["col_extent_nm"][0],
                          fr["col_extent_nm"][1] + fr["col_bin_nm"] / 2,
                          fr["col_bin_nm"])

    base = _saw_from(p["saw"])
    variants = [
        ("saw_off", SawWave(base.frequency_mhz, base.wavelength_um, 0.0, 1)),
        ("idt1", SawWave(base.frequency_mhz, base.wavelength_um,
                         base.amplitude, -1)),
        ("idt2", SawWave(base.frequency_mhz, base.wavelength_um,
                         base.amplitude, 1)),
    ]
    num_pulses = int(p["num_pulses"])
    files = []
    for vi, (tag, saw) in enumerate(variants):
        pump = PumpSpec(1.0, saw.period_ns, num_pulses)
        duration = num_pulses * saw.period_ns \
            + arrival_span(layout, saw) + 20.0 * max(model.lifetimes_ns)
        result = run_device(layout, saw, pump, duration,
                            cfg.master_seed + vi)
        frame = render_spatial_spectral(result.photons, row_edges, col_edges,
                                        spectrum,
                                        substream(cfg.master_seed, 7, vi))
        write_pgm(out / f"frame_{tag}.pgm", frame.counts)
        write_axes_csv(out / f"frame_{tag}_axes.csv", frame.row_centers_um,
                       frame.col_centers_nm)
        counts = {s.site_id: 0 for s in sites}
        for r in result.photons:
            counts[r.emitter_id] += 1
        _write_csv(out / f"site_counts_{tag}.csv", ["site_id", "x_um", "photons"],
                   [[s.site_id, s.position_um, counts[s.site_id]]
                    for s in sites])
        files.extend([f"frame_{tag}.pgm", f"frame_{tag}_axes.csv",
                      f"site_counts_{tag}.csv"])
        if p["write_photons"]:
            write_photon_csv(out / f"photons_{tag}.csv", result.photons)
            files.append(f"photons_{tag}.csv")
    return files


def arrival_span(layout: ChannelLayout, saw: SawWave) -> float:
    """Longest conveyance time from the spot to any site."""
    if not layout.sites:
        return 0.0
    far = max(abs(s.position_um - layout.spot.center_um)
              for s in layout.sites)
    return far / saw.velocity_um_per_ns


def _run_g2(cfg: ScenarioConfig, out: Path, threads: int) -> list[str]:
    p = cfg.params
    saw = _saw_from(p["saw"])
    period = saw.period_ns
    lifetime = float(p["site"]["lifetime_ns"])
    prob = float(p["site"]["capture_prob"])
    cycles = int(p["num_cycles"])
    if cycles < _G2_BLOCKS:
        raise ConfigError(f"num_cycles: need at least {_G2_BLOCKS}")
    sizes = _block_sizes(cycles, _G2_BLOCKS)
    starts = np.concatenate(([0], np.cumsum(sizes)))[:-1]

    def block(b: int) -> np.ndarray:
        rng = substream(cfg.master_seed, 2, b)
        return starts[b] * period + per_cycle_emission_times(
            sizes[b], period, prob, lifetime, rng)

    times = np.concatenate(_map_blocks(block, _G2_BLOCKS, threads))
    times = np.sort(times)
    max_delay = float(p["g2_periods"]) * period
    hist = g2_histogram(times, max_delay, float(p["g2_bin_ns"]), period)
    _write_csv(out / "g2_histogram.csv", ["delay_ns", "coincidences"],
               list(zip(hist.delay_ns, hist.counts)))
    ratio = hist.zero_peak_ratio
    _write_csv(out / "g2_summary.csv",
               ["num_photons", "num_cycles", "zero_peak_ratio"],
               [[times.size, cycles,
                 float(ratio) if ratio is not None else float("nan")]])
    return ["g2_histogram.csv", "g2_summary.csv"]


_RUNNERS = {
    "fig3_power_series": _run_fig3,
    "fig4_transients": _run_fig4,
    "fig4c_delays": _run_fig4c,
    "fig5_ensemble": _run_fig5,
    "fig7_remote": _run_fig7,
    "g2_antibunching": _run_g2,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def run_scenario(config: ScenarioConfig, out_dir, force: bool = False,
                 threads: int = 1) -> dict:
    """Execute a scenario and write its outputs plus a manifest.

    Refuses a non-empty output directory unless `force`; removes partial
    outputs if the run fails.  Returns the manifest dictionary.
    """
    if config.name not in _RUNNERS:
        raise ConfigError(f"unknown scenario '{config.name}'")
    out = Path(out_dir)
    created = not out.exists()
    if created:
        out.mkdir(parents=True)
    elif not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    elif any(out.iterdir()):
        if not force:
            raise ConfigError(
                f"output directory {out} is not empty (use force to overwrite)")
        for child in out.iterdir():
            shutil.rmtree(child) if child.is_dir() else child.unlink()

    try:
        files = _RUNNERS[config.name](config, out, max(int(threads), 1))
    except Exception:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        else:
            for child in out.iterdir():
                shutil.rmtree(child, ignore_errors=True) if child.is_dir() \
                    else child.unlink(missing_ok=True)
        raise

    canonical = json.dumps(config.to_dict(), sort_keys=True,
                           separators=(",", ":"))
    manifest = {
        "scenario": config.name,
        "master_seed": config.master_seed,
        "package_version": __version__,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "files": [{"name": name, "sha256": _sha256(out / name),
                   "bytes": (out / name).stat().st_size}
                  for name in sorted(files)],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest
