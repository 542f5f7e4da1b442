import numpy as np

from idecorona.svg import Panel, Series, render


def _panels():
    t = np.linspace(0, 10, 5000)
    return [Panel("a", [Series("x", t, np.exp(-t)), Series("y", t, np.cos(t), dashed=True)], "t", "v"),
            Panel("b", [Series("z", t, np.exp(-t) + 1e-12)], "t", "v", logy=True)]


def test_svg_is_deterministic_and_well_formed():
    import xml.etree.ElementTree as ET

    a, b = render(_panels(), columns=2), render(_panels(), columns=2)
    assert a == b
    root = ET.fromstring(a)
    assert root.tag.endswith("svg")
    assert a.count("<polyline") == 3
