"""Offline speech-encoder feature dumping and forced-alignment import."""

__version__ = "0.1.0"

from .alignments import (
    AlignmentError,
    build_query_spec,
    import_alignments,
    load_alignments_json,
    parse_textgrid_words,
)
from .extraction import (
    ExtractionError,
    ExtractionJob,
    conv_output_length,
    encode_word_segments,
    extract,
    load_model,
    measure_frame_rate,
    read_wav_mono,
)
from .feature_writer import encode_feature_file, write_feature_file

__all__ = [
    "__version__",
    "AlignmentError",
    "ExtractionError",
    "ExtractionJob",
    "build_query_spec",
    "conv_output_length",
    "encode_feature_file",
    "encode_word_segments",
    "extract",
    "import_alignments",
    "load_alignments_json",
    "load_model",
    "measure_frame_rate",
    "parse_textgrid_words",
    "read_wav_mono",
    "write_feature_file",
]
