"""Virtual-channel learning and tracking for massive MIMO uplink/downlink.

Modules:

- :mod:`vcrtrack.cgauss`: complex Gaussian algebra in the log domain
- :mod:`vcrtrack.channel_model`: array geometry, AR(1) virtual channels, training
- :mod:`vcrtrack.kalman`: Kalman filter and RTS smoother
- :mod:`vcrtrack.ul_learning`: EM learning of the uplink model
- :mod:`vcrtrack.ul_tracking`: grouped reduced-state uplink tracking
- :mod:`vcrtrack.dl_reconstruction`: downlink model reconstruction and training
- :mod:`vcrtrack.obkf`: downlink noise restoration with the OBKF
- :mod:`vcrtrack.harness`: Monte-Carlo experiments and CSV output
"""

__version__ = "0.1.0"
