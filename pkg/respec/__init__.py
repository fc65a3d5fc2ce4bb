from respec.core import EmbeddingMatrix, StreamRecord, normalize, read_bundle, write_bundle
from respec.engine import StreamInput, run_stream
from respec.filters import FilterDecision, Telemetry, decide, decide_batch, respec_decide
from respec.model import FilterConfig, RunConfig, StreamStats
from respec.reference import ReferenceBundle, TaskReference, build_reference_bundle, load_bundle, save_bundle
from respec.vmf import estimate_kappa, kde_log_density, sample_vmf

__version__ = "1.0.0"
