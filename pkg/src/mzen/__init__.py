"""Multi-zoom pose-free radiance field lab."""
