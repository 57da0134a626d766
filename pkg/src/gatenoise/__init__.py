"""Filter-function analysis of single-qubit gates under classical dephasing noise."""
from .control import (ControlSegment, ControlSequence, TargetGate, control_vector,
                      parity_counts, preset, PRESETS, target_gate)
from .spectra import PowerLaw, Tabulated, WhiteCutoff, noise_strength, variance, xi
from .filters import f1, f2_a, f2_b, f2_c, f2_total, y1, y1_closed_form, y1_numeric

__version__ = "0.1.0"
