"""Small-noise forward-backward G-SDEs with a convex penalty: simulation,
limit equations, variational inequality fields, convergence experiments and
large-deviation rate functions, in one space dimension.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("gldp")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
