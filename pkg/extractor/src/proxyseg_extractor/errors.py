class ExtractorError(Exception):
    """Any extraction failure meant to surface as a CLI error message."""
