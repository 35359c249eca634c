"""hetsim: simulate and partition DNN inference across heterogeneous accelerators.

The package models a host CPU plus fixed-function accelerators (embedded
GPU/VPU-class FP16 devices, TPU/DPU-class INT8 devices), calibrates their
cost models from end-to-end measurements, and searches layer-to-device
assignments under accuracy and energy constraints.
"""

from .accmodel import (AccuracyMetrics, AccuracyModel, CalibrationError,
                       CoverageError, calibrate_accuracy, load_accuracy_model,
                       model_from_document, model_to_document,
                       predict_accuracy, predict_from_shares)
from .calibrate import (FitResult, MeasurementRow, PlatformSkeleton,
                        fit_fig2_profiles, fit_profiles, load_fig2_targets,
                        load_measurements, load_skeleton)
from .devmodel import (DeviceProfile, LinkProfile, Platform, PlatformError,
                       Precision, energy, layer_latency, load_platform,
                       platform_from_document, platform_to_document,
                       tensor_bytes, transfer_latency)
from .netgraph import (GROUPS, Graph, GraphError, Layer, LayerKind,
                       TensorShape, fusion_units, graph_from_document,
                       graph_to_document, load_graph, op_count, param_count)
from .partitioner import (Constraints, InfeasibleError, ParetoPoint,
                          SearchResult, SearchSpaceError, exhaustive_search,
                          optimize_chain_dp, pareto_frontier)
from .quantlab import (FP16_MAX, QuantParams, dequantize, fit_quant_params,
                       quantize, quantize_dequantize, round_fp16, sqnr)
from .simulator import (ScheduleError, ScheduleReport, SegmentTrace,
                        check_unit_alignment, expand_assignment,
                        report_to_document, simulate, throughput,
                        write_trace_csv)

__version__ = "0.1.0"

__all__ = [
    "AccuracyMetrics", "AccuracyModel", "CalibrationError", "CoverageError",
    "calibrate_accuracy", "load_accuracy_model", "model_from_document",
    "model_to_document", "predict_accuracy", "predict_from_shares",
    "FitResult", "MeasurementRow", "PlatformSkeleton", "fit_fig2_profiles",
    "fit_profiles", "load_fig2_targets", "load_measurements", "load_skeleton",
    "DeviceProfile", "LinkProfile", "Platform", "PlatformError", "Precision",
    "energy", "layer_latency", "load_platform", "platform_from_document",
    "platform_to_document", "tensor_bytes", "transfer_latency",
    "GROUPS", "Graph", "GraphError", "Layer", "LayerKind", "TensorShape",
    "fusion_units", "graph_from_document", "graph_to_document", "load_graph",
    "op_count", "param_count",
    "Constraints", "InfeasibleError", "ParetoPoint", "SearchResult",
    "SearchSpaceError", "exhaustive_search", "optimize_chain_dp",
    "pareto_frontier",
    "FP16_MAX", "QuantParams", "dequantize", "fit_quant_params", "quantize",
    "quantize_dequantize", "round_fp16", "sqnr",
    "ScheduleError", "ScheduleReport", "SegmentTrace", "check_unit_alignment",
    "expand_assignment", "report_to_document", "simulate", "throughput",
    "write_trace_csv",
    "__version__",
]
