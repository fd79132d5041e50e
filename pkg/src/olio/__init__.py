"""olio: interpreter and socket runtime for a small service-orchestration language."""

__version__ = "0.1.0"
