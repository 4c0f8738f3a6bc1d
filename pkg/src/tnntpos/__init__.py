"""Joint terrestrial/LEO OFDM positioning under clock offset, CFO and mobility."""

__version__ = "0.1.0"
