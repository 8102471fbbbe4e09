#!/usr/bin/env python3
"""
Exception types shared across the sampler

Data problems that a stream can survive (a bad JSONL line, a trace with a
duplicated span id) are collected as diagnostics by the caller.
Everything else is raised.
"""

from typing import List, Optional


class TailSamplerError(Exception):
    """Base class for all sampler errors"""
    pass


class ConfigError(TailSamplerError):
    """Configuration loading or validation error"""
    pass


class MalformedRecord(TailSamplerError):
    """A JSONL line that could not be turned into a record"""

    def __init__(self, line_no: int, reason: str, source: Optional[str] = None):
        self.line_no = line_no
        self.reason = reason
        self.source = source
        where = f"{source}:{line_no}" if source else f"line {line_no}"
        super().__init__(f"Malformed record at {where}: {reason}")


class DuplicateSpanId(TailSamplerError):
    """Two spans of one trace share a span_id; the trace is rejected"""

    def __init__(self, trace_id: str, span_id: str):
        self.trace_id = trace_id
        self.span_id = span_id
        super().__init__(f"Trace {trace_id} has duplicate span_id {span_id}")


class MixedTraceIds(TailSamplerError):
    """assemble_trace was handed spans from more than one trace"""
    pass


class UnknownTraceId(TailSamplerError):
    """A sampled trace_id is missing from the evaluation corpus"""

    def __init__(self, trace_id: str):
        self.trace_id = trace_id
        super().__init__(f"Sampled trace_id {trace_id} not found in corpus")


class InvalidScenario(TailSamplerError):
    """Workload scenario failed validation; carries one message per field"""

    def __init__(self, messages: List[str]):
        self.messages = list(messages)
        super().__init__("Invalid scenario: " + "; ".join(self.messages))


class SinkWriteError(TailSamplerError):
    """An output sink could not be written"""
    pass
