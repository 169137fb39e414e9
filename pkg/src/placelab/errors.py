class DataError(Exception):
    """Input data violates the format or invariants the pipeline requires."""
