"""deskdrive: a deterministic desk-scale self-driving RC car stack."""

__version__ = "0.1.0"
