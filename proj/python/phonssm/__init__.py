from ._phonssm import *  # noqa: F401,F403
from ._phonssm import Model  # noqa: F401
