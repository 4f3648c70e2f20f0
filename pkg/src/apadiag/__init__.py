"""Fault diagnosis for active phased arrays from far-field probe IQ captures.

Modules: `waveform` (OFDM test signal), `arraysim` (4x4 array, PA and fault
simulator), `dataset` (captures to labelled feature vectors), `nn` (numpy
MLP), `pipeline` (training and experiments), `cli` (``apadiag`` command).
"""

__version__ = "0.1.0"
