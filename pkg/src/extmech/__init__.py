"""Extended-complex algebra, second-order mechanics, n-VMVF kinematics and an
algebraic extended quantum-mechanics layer."""

from . import extnum, extqm, nvmvf, varcalc

__all__ = ["extnum", "extqm", "nvmvf", "varcalc"]
__version__ = "0.1.0"
