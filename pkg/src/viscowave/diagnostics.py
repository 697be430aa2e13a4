"""Exceptional-point topology diagnostics on the assembled dataset.

Branch-pair interactions are located at local minima of the real-
wavenumber gap.  A Type I interaction shows real-part veering with a
broad imaginary-part crossing; an interaction is flagged TypeIISuspect
when the imaginary crossing is extremely sharp AND the spectral group
velocity visibly departs from the energy flux velocity inside the
window.  Classification is advisory; label swaps are applied only on
explicit request and are exact involutions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .velocities import DispersionDataset, FLAG_SWAPPED, ModePoint

TYPE_I = "TypeI"
TYPE_II_SUSPECT = "TypeIISuspect"

_N_SAMPLES = 400
_RISE_FACTOR = 1.5
_MIN_OVERLAP_POINTS = 5
_X_CRIT_MEDIAN_FACTOR = 5.0


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionEvent:
    """One branch-pair interaction window and its measured signatures."""

    branch_pair: tuple
    window: tuple                  # (omega_lo, omega_hi)
    re_gap_min: float
    im_crossing_width: float       # frequency span of the 10%-90% swing, inf if none
    vgve_excess: float
    classification: str
    crossing_freq: float           # sign change of Im k1 - Im k2 (NaN if none)

    @property
    def window_width(self) -> float:
        return self.window[1] - self.window[0]


def _branch_arrays(points):
    om = np.array([p.omega_hat for p in points])
    k = np.array([p.k for p in points])
    vgve = np.array([abs(np.real(p.vg) - p.ve) / max(abs(p.ve), 1e-300)
                     for p in points])
    return om, k, vgve


def _local_minima_windows(gap):
    """(index, left, right) for interior minima with enough prominence."""
    out = []
    n = len(gap)
    i = 1
    while i < n - 1:
        if gap[i] <= gap[i - 1] and gap[i] <= gap[i + 1]:
            target = _RISE_FACTOR * max(gap[i], 1e-300)
            left = i
            while left > 0 and gap[left - 1] >= gap[left]:
                left -= 1
            right = i
            while right < n - 1 and gap[right + 1] >= gap[right]:
                right += 1
            if gap[left] >= target and gap[right] >= target:
                out.append((i, left, right))
                i = right
        i += 1
    return out


def _im_crossing(om_w, di_w):
    """(crossing frequency, 10->90 swing width) or (nan, inf)."""
    sign = np.sign(di_w)
    change = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if len(change) == 0:
        return np.nan, np.inf
    j = change[0]
    t = di_w[j] / (di_w[j] - di_w[j + 1])
    crossing = om_w[j] + t * (om_w[j + 1] - om_w[j])
    lo, hi = di_w[0], di_w[-1]
    if lo == hi:
        return crossing, np.inf
    frac = (di_w - lo) / (hi - lo)
    inside = np.nonzero((frac >= 0.1) & (frac <= 0.9))[0]
    if len(inside) == 0:
        return crossing, 0.0
    width = om_w[inside[-1]] - om_w[inside[0]]
    return crossing, float(max(width, 0.0))


def dataset_vgve_median(ds: DispersionDataset) -> float:
    vals = [abs(np.real(p.vg) - p.ve) / max(abs(p.ve), 1e-300)
            for p in ds.points() if np.isfinite(p.vg.real)]
    return float(np.median(vals)) if vals else 0.0


def detect_interactions(ds: DispersionDataset, w_crit: float = 0.01,
                        x_crit: float = None) -> list:
    """Locate and classify branch-pair interactions.

    w_crit is the sharpness threshold as a fraction of the interaction
    window width; x_crit is the group-energy velocity excess threshold,
    defaulting to five times the dataset median of |Re vg - ve| / ve.
    """
    if x_crit is None:
        x_crit = _X_CRIT_MEDIAN_FACTOR * dataset_vgve_median(ds)
    labels = sorted(ds.branches)
    events = []
    arrays = {lab: _branch_arrays(ds.branches[lab]) for lab in labels
              if len(ds.branches[lab]) >= 2}
    for a_i, lab_a in enumerate(labels):
        if lab_a not in arrays:
            continue
        om_a, k_a, vgve_a = arrays[lab_a]
        for lab_b in labels[a_i + 1:]:
            if lab_b not in arrays:
                continue
            om_b, k_b, vgve_b = arrays[lab_b]
            lo = max(om_a[0], om_b[0])
            hi = min(om_a[-1], om_b[-1])
            if hi <= lo:
                continue
            if ((om_a >= lo) & (om_a <= hi)).sum() < _MIN_OVERLAP_POINTS:
                continue
            if ((om_b >= lo) & (om_b <= hi)).sum() < _MIN_OVERLAP_POINTS:
                continue
            om = np.linspace(lo, hi, _N_SAMPLES)
            re_a = np.interp(om, om_a, k_a.real)
            re_b = np.interp(om, om_b, k_b.real)
            im_a = np.interp(om, om_a, k_a.imag)
            im_b = np.interp(om, om_b, k_b.imag)
            gap = np.abs(re_a - re_b)
            for i_min, i_lo, i_hi in _local_minima_windows(gap):
                window = (float(om[i_lo]), float(om[i_hi]))
                crossing, width = _im_crossing(om[i_lo:i_hi + 1],
                                               (im_a - im_b)[i_lo:i_hi + 1])
                # velocity excess inside vs outside the window, per branch
                excess = 0.0
                for om_br, vgve_br in ((om_a, vgve_a), (om_b, vgve_b)):
                    inside = (om_br >= window[0]) & (om_br <= window[1])
                    if inside.any():
                        baseline = (float(np.median(vgve_br[~inside]))
                                    if (~inside).any() else 0.0)
                        excess = max(excess,
                                     float(vgve_br[inside].max()) - baseline)
                window_width = window[1] - window[0]
                sharp = (np.isfinite(width) and window_width > 0.0
                         and width < w_crit * window_width)
                cls = TYPE_II_SUSPECT if (sharp and excess > x_crit) else TYPE_I
                events.append(InteractionEvent(
                    branch_pair=(lab_a, lab_b), window=window,
                    re_gap_min=float(gap[i_min]),
                    im_crossing_width=float(width), vgve_excess=excess,
                    classification=cls, crossing_freq=float(crossing),
                ))
    events.sort(key=lambda e: (e.window[0], e.branch_pair))
    return events


def swap_labels(ds: DispersionDataset, event: InteractionEvent) -> DispersionDataset:
    """Exchange the two branch labels above the crossing frequency.

    Only valid for TypeIISuspect events; wavenumber values are untouched
    and affected points toggle the LabelSwapped flag, making the
    operation an exact involution.
    """
    if event.classification != TYPE_II_SUSPECT:
        raise DiagnosticsError("label swap requires a TypeIISuspect event")
    if not np.isfinite(event.crossing_freq):
        raise DiagnosticsError("event has no imaginary-part crossing frequency")
    lab_a, lab_b = event.branch_pair
    out = ds.copy_shallow()

    def partition(label):
        stay, move = [], []
        for p in out.branches.get(label, []):
            (move if p.omega_hat > event.crossing_freq else stay).append(p)
        return stay, move

    stay_a, move_a = partition(lab_a)
    stay_b, move_b = partition(lab_b)

    def relabel(points, new_label):
        return [replace(p, branch_label=new_label,
                        flags=frozenset(p.flags ^ {FLAG_SWAPPED}))
                for p in points]

    out.branches[lab_a] = sorted(stay_a + relabel(move_b, lab_a),
                                 key=lambda p: p.omega_hat)
    out.branches[lab_b] = sorted(stay_b + relabel(move_a, lab_b),
                                 key=lambda p: p.omega_hat)
    return out


def events_to_json(events: list, w_crit: float, x_crit: float) -> dict:
    return {
        "w_crit": w_crit,
        "x_crit": x_crit,
        "note": ("classification is empirical: sharp imaginary-part crossing "
                 "plus group/energy velocity discrepancy; thresholds are "
                 "engineering defaults and tunable"),
        "events": [
            {
                "branch_pair": list(e.branch_pair),
                "window": [e.window[0], e.window[1]],
                "re_gap_min": e.re_gap_min,
                "im_crossing_width": e.im_crossing_width,
                "vgve_excess": e.vgve_excess,
                "classification": e.classification,
                "crossing_freq": e.crossing_freq,
            }
            for e in events
        ],
    }
