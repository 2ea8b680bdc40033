from .config import RunConfig, paper_config
from .protocol import ProtocolData, RunRecord, build_protocol_data, run_protocol
from .train import adapt_step, train_base

__all__ = [
    "RunConfig",
    "paper_config",
    "ProtocolData",
    "RunRecord",
    "build_protocol_data",
    "run_protocol",
    "adapt_step",
    "train_base",
]
