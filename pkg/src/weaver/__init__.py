"""Synthesize working programs from hierarchical natural-language sketches.

A sketch lays out functions as an indented outline with one-line
descriptions, optional input/output constraints, and references between
functions. This package parses sketches, derives the dependency structure,
samples candidate implementations per function from a language-model
backend, and searches candidate combinations component by component until
the constraints hold.
"""

from .constraints import AssertBlock, codet_rank, codet_scores, translate_constraints
from .errors import (
    BackendUnavailable,
    BudgetExhausted,
    FixtureMissing,
    HarnessCrash,
    ParseError,
    SynthesisFailed,
    WeaverError,
)
from .executor import (
    EvalOutcome,
    EvalRequest,
    HarnessClient,
    LocalPythonExecutor,
    TableExecutor,
)
from .extract import extract_call_graph
from .graph import (
    build_call_graph,
    build_test_dependency_graph,
    strongly_connected_components,
    synthesis_order,
)
from .llm import (
    CompletionCache,
    GenerationRequest,
    HttpBackend,
    MockBackend,
    generate,
)
from .parser import (
    Constraint,
    FunctionNode,
    SketchProgram,
    emit_sketch,
    parse_program,
)
from .synth import (
    SynthOptions,
    SynthesizedProgram,
    direct_sampling_success,
    enumerate_combinations,
    synthesize,
)
from .target import TargetConfig, load_target

__version__ = "0.1.0"

__all__ = [
    "AssertBlock",
    "BackendUnavailable",
    "BudgetExhausted",
    "CompletionCache",
    "Constraint",
    "EvalOutcome",
    "EvalRequest",
    "FixtureMissing",
    "FunctionNode",
    "GenerationRequest",
    "HarnessClient",
    "HarnessCrash",
    "HttpBackend",
    "LocalPythonExecutor",
    "MockBackend",
    "ParseError",
    "SketchProgram",
    "SynthOptions",
    "SynthesisFailed",
    "SynthesizedProgram",
    "TableExecutor",
    "TargetConfig",
    "WeaverError",
    "build_call_graph",
    "build_test_dependency_graph",
    "codet_rank",
    "codet_scores",
    "direct_sampling_success",
    "emit_sketch",
    "enumerate_combinations",
    "extract_call_graph",
    "generate",
    "load_target",
    "parse_program",
    "strongly_connected_components",
    "synthesis_order",
    "synthesize",
    "translate_constraints",
]
