from .cfg import EdgeKind, ProgramGraph, build_graph
from .liveness import Liveness, analyze
from .normalize import normalize
from .roots import RootPlace, RootTable, compute_roots
from .analysis import FunctionAnalysis, analyze_function
