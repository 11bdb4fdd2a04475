"""File formats: PGM/PPM images, key=value configs, CSV traces."""
