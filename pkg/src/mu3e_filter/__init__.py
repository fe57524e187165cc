"""Three-stage online frame filter for a four-layer pixel tracker, with a toy event generator."""
from .cuts import CutConfig, select_triplets
from .framestore import ChunkBuilder, CorruptChunkError, Frame, parse_chunk
from .geometry import PHYSICS, Circle2D, DetectorGeometry, PhysicsConstants
from .pipeline import FrameDecision, PipelineConfig, RunReport, process_frame, run
from .toygen import GenConfig, generate_stream
from .tripletfit import FitConfig, TrackCandidate, fit_track, fit_triplet
from .vertex import VertexConfig, evaluate_frame

__version__ = "0.1.0"
