from .exceptions import *
from .common import *
from .rng import *
from .diffcore import *
