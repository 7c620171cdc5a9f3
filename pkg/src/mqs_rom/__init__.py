"""Structure-preserving model order reduction for quasilinear MQS field/circuit DAEs."""

__version__ = "0.1.0"
