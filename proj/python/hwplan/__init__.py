from ._hwplan import *  # noqa: F401,F403
from ._hwplan import __version__, InvalidArgument, NumericalFailure  # noqa: F401
