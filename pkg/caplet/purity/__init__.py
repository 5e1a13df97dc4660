from .checker import Violation, check_program, check_purity, check_spec_purity
