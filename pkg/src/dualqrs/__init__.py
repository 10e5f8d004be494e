"""R-peak detection with a dual-channel U-Net + BiLSTM, a Pan-Tompkins baseline,
and the signal processing and evaluation around them."""

__version__ = "0.1.0"
