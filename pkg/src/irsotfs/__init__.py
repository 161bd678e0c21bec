"""Link-level simulation lab for IRS-assisted OTFS."""

__version__ = "0.1.0"
