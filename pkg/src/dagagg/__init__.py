"""Linear learners arranged on a DAG: training, exact population runs and diagnostics."""

__version__ = "0.1.0"
