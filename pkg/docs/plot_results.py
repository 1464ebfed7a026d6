#!/usr/bin/env python3
"""Plot the CSV bundles written by ``palink run`` / ``palink reproduce``.

Usage: python docs/plot_results.py <out-dir> [--save <dir>]

Produces one figure per metric family (PSD, patterns, rate, BER) with one
panel per architecture, mirroring the reference figure layout.
"""

import argparse
import csv
import re
from collections import defaultdict
from pathlib import Path

import matplotlib
import numpy as np

ARCHS = ["fully_connected", "partial_geb", "partial_dft", "fully_digital"]


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def group_files(out_dir, prefix):
    pat = re.compile(rf"{prefix}_(\w+?)_(linear|nonlinear)_(\w+?)(?:_([+-][\d.]+))?\.csv")
    found = defaultdict(list)
    for path in sorted(Path(out_dir).glob(f"{prefix}_*.csv")):
        m = pat.match(path.name)
        if m:
            found[m.group(1)].append((m.group(2), m.group(3), m.group(4), path))
    return found


def panel_figure(title):
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(2, 2, figsize=(11, 8))
    fig.suptitle(title)
    return fig, dict(zip(ARCHS, axes.ravel()))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--save", type=Path, default=None)
    args = ap.parse_args()
    if args.save:
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figs = {}
    for prefix, ycol, xlabel, ylabel in [
        ("pattern", "Pob_dB", "angle (deg)", "out-of-band (dB)"),
        ("gmi", "bits", "Es/N0 (dB)", "rate bound (bits/symbol)"),
        ("ber", "ber_mc", "Es/N0 (dB)", "bit error rate"),
    ]:
        files = group_files(args.out_dir, prefix)
        if not files:
            continue
        fig, axes = panel_figure(prefix)
        for arch, entries in files.items():
            ax = axes.get(arch)
            if ax is None:
                continue
            for pa_mode, comp, _angle, path in entries:
                data = read_csv(path)
                xcol = "angle_deg" if prefix == "pattern" else "snr_dB"
                style = "--" if pa_mode == "linear" else "-"
                ax.plot(data[xcol], data[ycol], style,
                        label=f"{pa_mode}/{comp}")
                if prefix == "ber":
                    ax.plot(data["snr_dB"], data["ber_analytical"], ":",
                            label=f"{pa_mode}/{comp} (analytical)")
            if prefix == "ber":
                ax.set_yscale("log")
            ax.set_title(arch)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            ax.grid(alpha=0.4)
            ax.legend(fontsize=7)
        fig.tight_layout()
        figs[prefix] = fig

    if args.save:
        args.save.mkdir(parents=True, exist_ok=True)
        for name, fig in figs.items():
            fig.savefig(args.save / f"{name}.png", dpi=150)
            print(f"wrote {args.save / f'{name}.png'}")
    else:
        plt.show()


if __name__ == "__main__":
    main()
