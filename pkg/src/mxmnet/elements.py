"""Element symbols and covalent radii for atomic numbers 1 through 54."""

from __future__ import annotations

SYMBOLS = (
    "H", "He",
    "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar",
    "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe",
)

MAX_Z = len(SYMBOLS)

SYMBOL_TO_Z = {s: z for z, s in enumerate(SYMBOLS, start=1)}

# Single-bond covalent radii in Angstrom (standard tabulation; low-spin
# values for Mn, Fe and Co).  Indexed by atomic number.
COVALENT_RADIUS = {
    1: 0.31, 2: 0.28,
    3: 1.28, 4: 0.96, 5: 0.84, 6: 0.76, 7: 0.71, 8: 0.66, 9: 0.57, 10: 0.58,
    11: 1.66, 12: 1.41, 13: 1.21, 14: 1.11, 15: 1.07, 16: 1.05, 17: 1.02,
    18: 1.06,
    19: 2.03, 20: 1.76, 21: 1.70, 22: 1.60, 23: 1.53, 24: 1.39, 25: 1.39,
    26: 1.32, 27: 1.26, 28: 1.24, 29: 1.32, 30: 1.22,
    31: 1.22, 32: 1.20, 33: 1.19, 34: 1.20, 35: 1.20, 36: 1.16,
    37: 2.20, 38: 1.95, 39: 1.90, 40: 1.75, 41: 1.64, 42: 1.54, 43: 1.47,
    44: 1.46, 45: 1.42, 46: 1.39, 47: 1.45, 48: 1.44,
    49: 1.42, 50: 1.39, 51: 1.39, 52: 1.38, 53: 1.39, 54: 1.40,
}


def symbol(z: int) -> str:
    """Return the element symbol for atomic number ``z`` (1..54)."""
    if not 1 <= z <= MAX_Z:
        raise ValueError(f"atomic number {z} outside supported range 1..{MAX_Z}")
    return SYMBOLS[z - 1]


def atomic_number(sym: str) -> int:
    """Return the atomic number for an element symbol."""
    try:
        return SYMBOL_TO_Z[sym]
    except KeyError:
        raise ValueError(f"unknown element symbol {sym!r}") from None


def covalent_radius(z: int) -> float:
    """Covalent radius in Angstrom for atomic number ``z``."""
    try:
        return COVALENT_RADIUS[z]
    except KeyError:
        raise ValueError(
            f"no covalent radius for atomic number {z} (supported 1..{MAX_Z})"
        ) from None
