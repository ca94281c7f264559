"""Gamma line data for the surrogate isotope library.

Energies in keV, intensities are photons per decay (daughters in secular
equilibrium folded in). Values are rounded nuclear-data figures; the surrogate
only needs the relative pattern to be realistic.
"""

from specdapt.spectra.types import LineList

_LINES = {
    "Am241": [(59.54, 0.359), (26.34, 0.024)],
    "Ba133": [(81.00, 0.329), (276.40, 0.0716), (302.85, 0.183), (356.01, 0.621), (383.85, 0.0894)],
    "Co57": [(122.06, 0.856), (136.47, 0.107)],
    "Co60": [(1173.23, 0.9985), (1332.49, 0.9998)],
    "Cs137": [(661.66, 0.851)],
    "Mo99": [(140.51, 0.894), (181.07, 0.0601), (739.50, 0.1212), (777.92, 0.0426)],
    "Tc99m": [(140.51, 0.885)],
    "Na22": [(511.00, 1.798), (1274.54, 0.9994)],
    "I131": [(284.31, 0.0612), (364.49, 0.817), (636.99, 0.0716), (722.91, 0.0177)],
    "Mn54": [(834.85, 0.9998)],
    "Y88": [(898.04, 0.937), (1836.06, 0.992)],
    "Eu152": [
        (121.78, 0.2853), (244.70, 0.0755), (344.28, 0.2659), (778.90, 0.1293),
        (964.08, 0.1451), (1085.84, 0.1011), (1112.08, 0.1367), (1408.01, 0.2087),
    ],
    "Ra226": [
        (186.21, 0.0364), (242.00, 0.0726), (295.22, 0.1842), (351.93, 0.356),
        (609.31, 0.4549), (1120.29, 0.1492), (1764.49, 0.1531),
    ],
    "Th228": [(238.63, 0.436), (583.19, 0.306), (727.33, 0.0667), (860.56, 0.045), (2614.51, 0.359)],
    "Ho166m": [(184.41, 0.727), (280.46, 0.301), (711.69, 0.55), (810.29, 0.57)],
    "Se75": [(121.12, 0.172), (136.00, 0.585), (264.66, 0.589), (279.54, 0.25), (400.66, 0.114)],
    "Ga67": [(93.31, 0.39), (184.58, 0.21), (300.22, 0.17), (393.53, 0.046)],
    "In111": [(171.28, 0.906), (245.35, 0.94)],
}

DEFAULT_ISOTOPES = ("Am241", "Ba133", "Co57", "Co60", "Cs137", "Mo99", "Tc99m", "Na22")

# natural K-40, U/Ra and Th chains plus annihilation; weights are relative count rates
BACKGROUND = LineList(
    "background",
    [
        (1460.82, 1.0),
        (609.31, 0.45), (351.93, 0.35), (295.22, 0.18), (1764.49, 0.15), (1120.29, 0.15),
        (2614.51, 0.36), (583.19, 0.31), (911.20, 0.26), (238.63, 0.44), (338.32, 0.11),
        (511.00, 0.10),
    ],
)


def isotope_names():
    return sorted(_LINES)


def line_list(isotope: str) -> LineList:
    try:
        return LineList(isotope, _LINES[isotope])
    except KeyError:
        from specdapt.errors import ValidationError

        raise ValidationError(f"unknown isotope {isotope!r}; known: {', '.join(isotope_names())}") from None
