from importlib.metadata import PackageNotFoundError, version

from mop_kernel.mop_kernel import main


__all__ = ["main"]


try:
    __version__ = version("mop_kernel")
except PackageNotFoundError:
    __version__ = "unknown"
