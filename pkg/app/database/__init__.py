from .config_loader import *
from .dataset_loader import *
from .split_store import *
from .checkpoint_store import *
