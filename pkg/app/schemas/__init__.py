from app.schemas.config import *
from app.schemas.metrics import *
from app.schemas.training import *
from app.schemas.split import *
