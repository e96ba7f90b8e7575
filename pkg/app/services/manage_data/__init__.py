from .interactions import *
from .splitter import *
from .sampling import *
from .batching import *
