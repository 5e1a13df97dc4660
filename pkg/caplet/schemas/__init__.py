from .solver import *
from .report import *
