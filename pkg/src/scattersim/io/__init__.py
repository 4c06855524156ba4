"""Package for file formats and reports."""
