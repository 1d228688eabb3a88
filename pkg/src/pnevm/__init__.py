"""Phase-noise spectra, MBCRB-based EVM bounds and Monte-Carlo validation."""
