from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, tensors_digest
from .datasets import Dataset, gen_ctr, gen_tokens, gen_toy, load_dataset, save_dataset
from .idx import IdxError, read_idx
from .report import EstimateRow, ReportDocument, ReportError, read_report, write_report
from .svg import emit_svg_bars, emit_svg_lines

__all__ = [
    "CheckpointError", "load_checkpoint", "save_checkpoint", "tensors_digest",
    "Dataset", "gen_ctr", "gen_tokens", "gen_toy", "load_dataset", "save_dataset",
    "IdxError", "read_idx",
    "EstimateRow", "ReportDocument", "ReportError", "read_report", "write_report",
    "emit_svg_bars", "emit_svg_lines",
]
