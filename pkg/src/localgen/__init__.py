"""Learning time-local generators of reduced spin-chain dynamics."""
