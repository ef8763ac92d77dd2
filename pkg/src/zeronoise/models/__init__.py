from .decomposition import DecompositionResult, decomposition_check
from .expr import (ArityError, EvaluationError, FieldExpr, FieldSyntaxError, UnknownIdentifier,
                   build_custom_model, parse_field)
from .zoo import (PARAMS, cutoff_diffusion, goodwin_nonlinearities, lemniscate_invariant,
                  make_params, may_leonard_case, may_leonard_equilibria, published_equilibria,
                  smoothstep5, zoo_build, zoo_names)

__all__ = [
    "ArityError", "DecompositionResult", "EvaluationError", "FieldExpr", "FieldSyntaxError",
    "PARAMS", "UnknownIdentifier", "build_custom_model", "cutoff_diffusion",
    "decomposition_check", "goodwin_nonlinearities", "lemniscate_invariant", "make_params",
    "may_leonard_case", "may_leonard_equilibria", "parse_field", "published_equilibria",
    "smoothstep5", "zoo_build", "zoo_names",
]
