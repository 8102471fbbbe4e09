__version__ = '0.1.0'

from .config import Config, load_config
from .dpp_selector import SelectorConfig, SimilarityCache, greedy_select
from .errors import ConfigError, TailSamplerError
from .log_templater import EventManager, TemplateStore
from .pipeline import PipelineSettings, SamplerState, SamplerVariant, run_stream
from .quota_allocator import AlarmFeed, AllocatorConfig, allocate
from .trace_encoder import AnomalyConfig, TraceEncoder, encode
from .trace_model import Trace, assemble_trace, parse_trace_stream


def create_state(config=None):
    """Helper to build sampler state from a Config (default config when None)"""
    if config is None:
        config = load_config()
    return SamplerState.create(config.pipeline_settings())
