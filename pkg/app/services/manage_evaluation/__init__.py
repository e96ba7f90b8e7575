from .ranking import *
from .robustness import *
from .posterior_export import *
