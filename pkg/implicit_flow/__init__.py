from .IFLOW_Exception import IFLOW_Exception
from .types import *
from .constants import *
from .nn import *
from .siren import *
from .hypernet import *
from .flow import *
from .synth import *
from .encoded import EncodedScene
from .config import EncodeConfig, load_encode_config
from .pipeline import *
