"""Security-typed while-to-RISC compiler with a transient-fault laboratory."""

__version__ = "0.1.0"
