"""Full-duplex JCAS beamforming: hybrid and analog designs with NSP self-interference
nulling, CRP sidelobe optimization and an OFDM radar simulator."""

__version__ = "0.1.0"

from .array import ArrayConfig, GainPattern, WaveformConfig  # noqa: E402
from .errors import ConfigError, DegenerateDirections, FullRankNullspace, Infeasible, LoadError  # noqa: E402
from .nsp import NspConfig, Projector  # noqa: E402
from .sichannel import SiChannelSet, SiErrorConfig  # noqa: E402

__all__ = [
    "ArrayConfig",
    "ConfigError",
    "DegenerateDirections",
    "FullRankNullspace",
    "GainPattern",
    "Infeasible",
    "LoadError",
    "NspConfig",
    "Projector",
    "SiChannelSet",
    "SiErrorConfig",
    "WaveformConfig",
]
