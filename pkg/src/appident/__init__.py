"""Early app identification from the first packets of network flows.

The package turns packet captures into bidirectional flows, encodes each
flow's first six packets as a 1536-value byte vector under a configurable
layer-strip mode, classifies flows with a 1-D CNN, associates temporally
adjacent flows through a joint CNN+LSTM to recover the source app of shared
(ambiguous) traffic, and explains TLS-borne identity leaks via handshake
field occlusion. A deterministic synthetic corpus generator provides
labeled captures for every piece.
"""

from .association import (
    AssocConfig,
    FlowAssociationClassifier,
    LabelSpace,
    WindowSet,
    augment_mixed,
    build_windows,
    evaluate_joint,
    load_windows,
    save_windows,
)
from .classifier import (
    CnnAppClassifier,
    CrossValReport,
    build_cnn,
    evaluate_network,
    kfold_indices,
    rebalance,
    train_app_classifier,
)
from .encoding import (
    EncodeConfig,
    FeatureVector,
    FlowByteEncoder,
    FlowDataset,
    StripMode,
    encode_flow,
    load_dataset,
    row_hexdump,
    save_dataset,
    strip_bytes,
)
from .errors import FormatError
from .flows import (
    BiFlow,
    FlowKey,
    IngestConfig,
    apply_labels,
    assemble_flows,
    load_flow_store,
    save_flow_store,
)
from .metrics import MetricsReport
from .occlusion import OcclusionReport, OcclusionSpec, run_occlusion
from .pcap import PacketRecord, PcapFormatError, PcapReader, read_pcap, write_pcap
from .pipeline import extract, field_maps, flows_to_dataset
from .synth import (
    AmbiguousTemplate,
    AppProfile,
    CorpusSpec,
    corpus_stats,
    generate_corpus,
    make_app_mix_spec,
    make_association_spec,
    make_sni_only_spec,
)
from .tls import FieldSpan, TlsFieldMap, occlude_vector, parse_flow_tls

__version__ = "0.1.0"

__all__ = [
    "AmbiguousTemplate",
    "AppProfile",
    "AssocConfig",
    "BiFlow",
    "CnnAppClassifier",
    "CorpusSpec",
    "CrossValReport",
    "EncodeConfig",
    "FeatureVector",
    "FieldSpan",
    "FlowAssociationClassifier",
    "FlowByteEncoder",
    "FlowDataset",
    "FlowKey",
    "FormatError",
    "IngestConfig",
    "LabelSpace",
    "MetricsReport",
    "OcclusionReport",
    "OcclusionSpec",
    "PacketRecord",
    "PcapFormatError",
    "PcapReader",
    "StripMode",
    "TlsFieldMap",
    "WindowSet",
    "apply_labels",
    "assemble_flows",
    "augment_mixed",
    "build_cnn",
    "build_windows",
    "corpus_stats",
    "encode_flow",
    "evaluate_joint",
    "evaluate_network",
    "extract",
    "field_maps",
    "flows_to_dataset",
    "generate_corpus",
    "kfold_indices",
    "load_dataset",
    "load_flow_store",
    "load_windows",
    "make_app_mix_spec",
    "make_association_spec",
    "make_sni_only_spec",
    "occlude_vector",
    "parse_flow_tls",
    "read_pcap",
    "rebalance",
    "row_hexdump",
    "run_occlusion",
    "save_dataset",
    "save_flow_store",
    "save_windows",
    "strip_bytes",
    "train_app_classifier",
    "write_pcap",
]
