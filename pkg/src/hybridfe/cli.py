"""CLI (stub)."""
def main(argv=None):
    raise NotImplementedError
