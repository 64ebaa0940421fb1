from .corrupt import CorruptionConfig, NotInAdditiveForm, corrupt, flatten_terms
from .floats import (EXP_LIMIT, ExponentOutOfRange, MalformedTriplet,
                     decode_float, encode_float)
from .metrics import expression_error
from .polish import InvalidExpression, from_polish, to_polish
from .tree import (BINARY_OPS, LEAF_KINDS, MAX_DIM, UNARY_OPS, DimensionMismatch,
                   DomainError, Node, PlaceholderPresent, SystemExpr, add,
                   add_terms, compile_system, const, cos, div, evaluate,
                   evaluate_many, mul, neg, placeholder, pow_, sin, sub,
                   system_to_infix, to_infix, var)
from .vocab import (EOS_WORD, PAD_WORD, PLACEHOLDER_WORD, SEP_WORD, SIGN_WORDS,
                    SOS_WORD, UnknownWord, Vocabulary, string_to_words,
                    words_to_string)

__all__ = [
    "BINARY_OPS", "UNARY_OPS", "LEAF_KINDS", "MAX_DIM",
    "Node", "SystemExpr", "DomainError", "PlaceholderPresent",
    "DimensionMismatch", "add", "sub", "mul", "div", "pow_", "sin", "cos",
    "neg", "const", "var", "placeholder", "add_terms", "evaluate",
    "evaluate_many", "compile_system", "to_infix", "system_to_infix",
    "encode_float", "decode_float", "ExponentOutOfRange", "MalformedTriplet",
    "EXP_LIMIT", "to_polish", "from_polish", "InvalidExpression",
    "CorruptionConfig", "corrupt", "flatten_terms", "NotInAdditiveForm",
    "expression_error", "Vocabulary", "UnknownWord", "PAD_WORD", "SOS_WORD",
    "EOS_WORD", "SEP_WORD", "PLACEHOLDER_WORD", "SIGN_WORDS",
    "words_to_string", "string_to_words",
]
