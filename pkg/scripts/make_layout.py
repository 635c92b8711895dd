"""Build src/scdm/data/layout_v1.json from 10-10 style electrode names.

Coordinates use an azimuthal projection where one 10% step is 0.2 of the
unit-disc radius; fNIRS sites are the midpoints of their source/detector pair.
"""

import json
import math
import re
from pathlib import Path

ROWS = {"Fp": 4, "AFp": 3.5, "AF": 3, "AFF": 2.5, "F": 2, "FFC": 1.5, "FC": 1, "FCC": 0.5,
        "C": 0, "T": 0, "CCP": -0.5, "CP": -1, "CPP": -1.5, "P": -2, "PPO": -2.5, "PO": -3,
        "POO": -3.5, "O": -4}

EEG = ["AFp1", "AFp2", "AFF1h", "AFF2h", "AFF5h", "AFF6h", "F3", "F4", "F7", "F8",
       "FCC3h", "FCC4h", "FCC5h", "FCC6h", "T7", "T8", "Cz", "CCP3h", "CCP4h", "CCP5h",
       "CCP6h", "Pz", "P3", "P4", "P7", "P8", "PPO1h", "PPO2h", "POO1", "POO2"]

FNIRS = [("AF7", "Fp1"), ("AF3", "Fp1"), ("AF3", "AFz"), ("Fpz", "Fp1"), ("Fpz", "AFz"),
         ("Fpz", "Fp2"), ("AF4", "AFz"), ("AF4", "Fp2"), ("AF8", "Fp2"),
         ("C5", "CP5"), ("C5", "FC5"), ("C5", "C3"), ("FC3", "FC5"), ("FC3", "C3"), ("FC3", "FC1"),
         ("CP3", "CP5"), ("CP3", "C3"), ("CP3", "CP1"), ("C1", "C3"), ("C1", "FC1"), ("C1", "CP1"),
         ("C2", "FC2"), ("C2", "CP2"), ("C2", "C4"), ("FC4", "FC2"), ("FC4", "C4"), ("FC4", "FC6"),
         ("CP4", "CP6"), ("CP4", "CP2"), ("CP4", "C4"), ("C6", "CP6"), ("C6", "C4"), ("C6", "FC6"),
         ("Oz", "POz"), ("Oz", "O1"), ("Oz", "O2")]

GRID = 16
EXTENT = 0.9


def position(name):
    m = re.fullmatch(r"([A-Za-z]+?)(z|\d+)(h?)", name)
    prefix, num, half = m.groups()
    row = ROWS[prefix]
    if num == "z":
        steps = 0.0
    else:
        n = int(num)
        steps = -(n + 1) / 2 if n % 2 else n / 2
        if half:
            steps -= math.copysign(0.5, steps)
    y = 0.2 * row
    x = 0.2 * steps * math.sqrt(max(0.0, 1 - y * y))
    return x, y


def region(x, y, modality):
    if y > 0.45:
        return "frontal"
    if y < -0.45:
        return "occipital"
    return "motor_left" if x < 0 else "motor_right"


def assign_cells(points):
    taken, cells = set(), []
    for x, y in points:
        fc = (x + EXTENT) / (2 * EXTENT) * GRID
        fr = (EXTENT - y) / (2 * EXTENT) * GRID
        cands = sorted(
            ((r, c) for r in range(GRID) for c in range(GRID) if (r, c) not in taken),
            key=lambda rc: ((rc[0] + 0.5 - fr) ** 2 + (rc[1] + 0.5 - fc) ** 2, rc),
        )
        cells.append(cands[0])
        taken.add(cands[0])
    return cells


def main():
    channels = []
    eeg_xy = [position(n) for n in EEG]
    for name, (x, y), (r, c) in zip(EEG, eeg_xy, assign_cells(eeg_xy)):
        channels.append(dict(name=name, x=round(x, 6), y=round(y, 6), grid_row=r, grid_col=c,
                             modality="EEG", region=region(x, y, "EEG")))
    nirs_xy = []
    for src, det in FNIRS:
        (x1, y1), (x2, y2) = position(src), position(det)
        nirs_xy.append(((x1 + x2) / 2, (y1 + y2) / 2))
    for (src, det), (x, y), (r, c) in zip(FNIRS, nirs_xy, assign_cells(nirs_xy)):
        channels.append(dict(name=f"{src}-{det}", x=round(x, 6), y=round(y, 6), grid_row=r,
                             grid_col=c, modality="fNIRS", region=region(x, y, "fNIRS")))
    out = Path(__file__).resolve().parents[1] / "src" / "scdm" / "data" / "layout_v1.json"
    out.write_text(json.dumps({"version": 1, "grid_size": GRID, "channels": channels}, indent=1) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
