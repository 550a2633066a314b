"""Offline figure rendering for vlasov-dlra diagnostics CSVs and checkpoints."""

from .figures import FigureSpec, render, render_adaptivity, render_density
from .runio import Checkpoint, FormatError, read_checkpoint, read_run_csv

__version__ = "0.1.0"
