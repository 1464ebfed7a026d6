"""Link-level simulator for multi-user massive-MIMO downlink with hybrid
beamforming under nonlinear power amplification."""

__version__ = "0.1.0"
