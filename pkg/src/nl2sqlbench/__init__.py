"""NL2SQL benchmark harness: execution accuracy, test-time scaling metrics, and
an agentic retrieve/generate/verify/select pipeline over SQLite databases."""

__version__ = "0.1.0"
