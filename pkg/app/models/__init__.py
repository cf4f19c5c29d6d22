"""Data models: tokens, relations, provenance, partitions, runs and textures."""
