from .params import *
from .batch import *
from .networks import *
from .objectives import *
