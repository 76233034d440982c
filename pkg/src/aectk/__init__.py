"""aectk: waveform-domain acoustic echo cancellation toolkit."""

__version__ = "0.1.0"
