"""Tractography fiber classification toolkit.

Thin wrapper over the C++ extension: .trk IO, curvature-based pruning,
stacked BiLSTM training, and the intra/inter/merged evaluation protocols.
"""

try:
    from ._fiberseg import *  # noqa: F401,F403  (installed wheel layout)
    from ._fiberseg import __version__  # noqa: F401
except ImportError:  # in-tree builds put the extension on sys.path directly
    from _fiberseg import *  # noqa: F401,F403
    from _fiberseg import __version__  # noqa: F401
