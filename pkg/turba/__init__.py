__version__ = "0.1.0"

from .utils import *

from .parameters import *

from .network import *

from .dynamics import *

from .data import *

from .simulators import *

from .model import *

from .calibration import *

from .metrics import *

from .runner import *

from .cli import *
