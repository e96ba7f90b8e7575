from .optimizers import *
from .trainer import *
