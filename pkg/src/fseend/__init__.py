"""Frame-wise streaming end-to-end neural diarization in numpy."""
from .model import FSEEND, ModelConfig
from .streaming import StreamState, run_stream

__all__ = ["FSEEND", "ModelConfig", "StreamState", "run_stream"]
__version__ = "0.1.0"
