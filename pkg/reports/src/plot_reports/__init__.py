"""Figure generation for continual-learning run artifacts.

Reads the CSV files written by the experiment harness (per-epoch accuracy
curves, firing-frequency profiles, accuracy matrices) and renders the
standard report figures. Every plotted series can be exported back to CSV
for diffing, and rendering is deterministic: the same inputs produce the
same bytes.
"""

__version__ = "0.1.0"
