"""Bundled in-context example transcripts."""
