from .arrays import *
from .tape import *
from .grad_check import *
