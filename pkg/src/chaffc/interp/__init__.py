"""Byte-precise taint-tracking interpreter for the mini-C subset."""

from .machine import (
    AuditConfig, ExecResult, FaultReport, FrameGeometry, FrameLayout, Machine,
    Value, measure_frame_geometry, run_program, static_frame_layout,
)
from .memory import Memory
from .trace import (
    BranchEval, CallEnter, HeapAlloc, HeapFree, InputRead, LvalueObserved,
    Return, StmtEnter, read_trace, write_trace, write_trace_text,
)

__all__ = [
    "AuditConfig", "BranchEval", "CallEnter", "ExecResult", "FaultReport",
    "FrameGeometry", "FrameLayout", "Value", "measure_frame_geometry",
    "static_frame_layout",
    "HeapAlloc", "HeapFree", "InputRead", "LvalueObserved", "Machine",
    "Memory", "Return", "StmtEnter", "read_trace", "run_program",
    "write_trace", "write_trace_text",
]
