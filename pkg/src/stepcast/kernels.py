"""Backend selection for the LSTM and ARMA hot loops.

The compiled ``_core`` extension is used when it imports; otherwise, or when
``STEPCAST_PURE_PYTHON=1`` is set, the numpy implementations in ``_pycore``
are used. Both expose identical functions.
"""

import os

from stepcast import _pycore

if os.environ.get("STEPCAST_PURE_PYTHON") == "1":
    _impl = _pycore
else:
    try:
        from stepcast import _core as _impl
    except ImportError:
        _impl = _pycore

BACKEND = "compiled" if _impl is not _pycore else "python"

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
css_residuals = _impl.css_residuals
css_objective = _impl.css_objective
