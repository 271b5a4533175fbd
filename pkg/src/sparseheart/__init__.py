"""Dense 3D whole-heart label geometry from sparse, motion-corrupted
cardiac slice stacks: slice simulation, slice-shift motion correction,
diffeomorphic atlas registration, and Dice / Hausdorff / topology checks.
"""

__version__ = "0.1.0"
