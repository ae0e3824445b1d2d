"""CSV tables behind each figure and their SVG renderings.

Every ``render_*`` function reads only the CSV it is given, so a figure can
always be rebuilt from its table.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .analysis import peak_histogram
from .gaussian import entanglement_breaking_gain, epr_covariance, apply_phase_insensitive_gain
from .gaussian import inseparability, mutual_information, r_from_db
from .svgplot import Panel, render
from .traceio import atomic_write_text, write_csv


def _read_table(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    cols = {h: [] for h in header}
    for row in rows[1:]:
        for h, v in zip(header, row):
            cols[h].append(v)
    return cols


def _floats(values) -> np.ndarray:
    return np.array([float(v) if v != "" else np.nan for v in values])


# ------------------------------------------------------------ fig 3: xcorr


def write_fig3_tables(out_dir, results: dict, bin_width: float) -> tuple:
    out = Path(out_dir)
    labels = list(results)
    lags = next(iter(results.values())).xcorr_lags
    rows = [[lag * 1e9] + [results[k].xcorr_mean[i] for k in labels] for i, lag in enumerate(lags)]
    curve = out / "fig3.csv"
    write_csv(curve, ["lag_ns"] + [f"xcorr_{k}" for k in labels], rows)

    hists = {k: peak_histogram(r.peak_discrete[np.isfinite(r.peak_discrete)], bin_width) for k, r in results.items()}
    lo = min(h[0][0] for h in hists.values() if h[0].size)
    hi = max(h[0][-1] for h in hists.values() if h[0].size)
    bins = np.arange(round(lo / bin_width), round(hi / bin_width) + 1)
    hrows = []
    for b in bins:
        row = [b * bin_width * 1e9]
        for k in labels:
            centers, counts = hists[k]
            idx = np.nonzero(np.rint(centers / bin_width) == b)[0]
            row.append(int(counts[idx[0]]) if idx.size else 0)
        hrows.append(row)
    hist = out / "fig3_hist.csv"
    write_csv(hist, ["peak_ns"] + [f"count_{k}" for k in labels], hrows)
    return curve, hist


def render_fig3(curve_csv, hist_csv) -> str:
    c = _read_table(curve_csv)
    lag = _floats(c["lag_ns"])
    top = Panel("Cross-correlation of probe and conjugate", "lag (ns)", "normalized correlation")
    for key in c:
        if key.startswith("xcorr_"):
            top.add(lag, _floats(c[key]), label=key[6:])
    h = _read_table(hist_csv)
    peaks = _floats(h["peak_ns"])
    bottom = Panel("Per-shot peak locations", "peak lag (ns)", "shots")
    for key in h:
        if key.startswith("count_"):
            bottom.add(peaks, _floats(h[key]), label=key[6:], style="bars")
    return render([top, bottom])


# --------------------------------------------------------- fig 4: MI sweep


def write_fig4_table(out_dir, results: dict) -> Path:
    labels = list(results)
    delays = next(iter(results.values())).delays
    header = ["delay_ns"]
    for k in labels:
        header += [f"mi_{k}", f"mi_sem_{k}", f"insep_{k}", f"insep_sem_{k}"]
    rows = []
    for i, d in enumerate(delays):
        row = [d * 1e9]
        for k in labels:
            r = results[k]
            row += [r.mi_bits_mean[i], r.mi_bits_sem[i], r.insep_mean[i], r.insep_sem[i]]
        rows.append(row)
    path = Path(out_dir) / "fig4.csv"
    write_csv(path, header, rows)
    return path


def render_fig4(csv_path) -> str:
    c = _read_table(csv_path)
    d = _floats(c["delay_ns"])
    mi = Panel("Mutual information versus delay", "delay (ns)", "I (bits)")
    ins = Panel("Inseparability versus delay", "delay (ns)", "X- + Y+", hline=2.0)
    for key in c:
        if key.startswith("mi_") and not key.startswith("mi_sem_"):
            k = key[3:]
            mi.add(d, _floats(c[key]), label=k, yerr=_floats(c[f"mi_sem_{k}"]))
            ins.add(d, _floats(c[f"insep_{k}"]), label=k, yerr=_floats(c[f"insep_sem_{k}"]))
    return render([mi, ins])


# ------------------------------------------------- fig S4: theory curves


def theory_table(r_db_values, gains) -> list:
    rows = []
    for db in r_db_values:
        r = r_from_db(db)
        g_star = entanglement_breaking_gain(r)
        v0 = epr_covariance(r)
        for g in gains:
            v = apply_phase_insensitive_gain(v0, g)
            rows.append([db, r, g, mutual_information(v), inseparability(v), g_star])
    return rows


THEORY_COLUMNS = ("r_db", "r", "gain", "mi_bits", "inseparability", "breaking_gain")


def write_theory_table(out_dir, r_db_values, gains) -> Path:
    path = Path(out_dir) / "figS4.csv"
    write_csv(path, THEORY_COLUMNS, theory_table(r_db_values, gains))
    return path


def render_figS4(csv_path) -> str:
    c = _read_table(csv_path)
    db = _floats(c["r_db"])
    g = _floats(c["gain"])
    mi = _floats(c["mi_bits"])
    ins = _floats(c["inseparability"])
    p1 = Panel("Mutual information after gain", "gain G", "I (bits)")
    p2 = Panel("Inseparability after gain", "gain G", "X- + Y+", hline=2.0)
    for level in list(dict.fromkeys(c["r_db"])):
        m = db == float(level)
        p1.add(g[m], mi[m], label=f"{float(level):g} dB")
        p2.add(g[m], ins[m], label=f"{float(level):g} dB")
    return render([p1, p2])


# --------------------------------------------------- medium response plot


def render_kk(response_csv) -> str:
    c = _read_table(response_csv)
    f = _floats(c["freq_hz"]) / 1e6
    amp = _floats(c["amplitude"])
    tau = _floats(c["group_delay_s"]) * 1e9
    step = max(1, f.size // 4000)
    p1 = Panel("Gain profile", "detuning (MHz)", "G")
    p1.add(f[::step], (amp**2)[::step])
    p2 = Panel("Group delay", "detuning (MHz)", "delay (ns)", hline=0.0)
    p2.add(f[::step], tau[::step])
    return render([p1, p2])


RENDERERS = {
    "fig3.svg": (render_fig3, ("fig3.csv", "fig3_hist.csv")),
    "fig4.svg": (render_fig4, ("fig4.csv",)),
    "figS4.svg": (render_figS4, ("figS4.csv",)),
    "kk.svg": (render_kk, ("kk.csv",)),
}


def rebuild(out_dir) -> list:
    """Re-render every figure whose backing CSV exists in ``out_dir``."""
    out = Path(out_dir)
    made = []
    for svg, (fn, sources) in RENDERERS.items():
        paths = [out / s for s in sources]
        if all(p.exists() for p in paths):
            atomic_write_text(out / svg, fn(*paths))
            made.append(out / svg)
    return made
