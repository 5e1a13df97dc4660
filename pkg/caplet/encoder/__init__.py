from .obligations import EncodedFunction, EncoderOptions, Obligation, ObligationKind
from .statements import encode_function, lower_obligations
