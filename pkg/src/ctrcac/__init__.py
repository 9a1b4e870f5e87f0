"""Online learning of multirotor P-PI gains by continuous-time retrospective cost optimization."""

__version__ = "0.1.0"
