"""Real-time flexibility evaluation for aggregated EV fleets under SOC and early-departure uncertainty."""

__version__ = "0.1.0"
