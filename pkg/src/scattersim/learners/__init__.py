"""Package for learned inverse mappings."""
