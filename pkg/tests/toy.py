"""Small hand-built scenes shared by the unit tests."""

import copy

from dtloc.scene import scene_from_dict

BASE = {
    "schema_version": 1,
    "name": "toy",
    "frequency": {"carrier_hz": 3.5e9, "bandwidth_hz": 20e6, "subcarrier_hz": 15e3, "subband_hz": 1e6},
    "materials": [{"id": "wall", "reflection_loss_db": 6.0}, {"id": "ground", "reflection_loss_db": 0.0}],
    "ground": {"material": "ground"},
    "buildings": [],
    "base_station": {"position": [0.0, 0.0, 10.0], "tx_power_dbm": 30.0,
                     "array": {"n_antennas": 1, "spacing_wavelengths": 0.5, "boresight_az_deg": 0.0}},
    "grid": {"origin": [0.0, 0.0], "extent": [20.0, 10.0], "resolution": 2.0, "height": 2.0},
}


def box(x0, y0, x1, y1, height=20.0, material="wall"):
    return {"footprint": [[x0, y0], [x1, y0], [x1, y1], [x0, y1]], "height": height, "material": material}


def scene_doc(**overrides):
    """Deep copy of the base document with top-level keys replaced or patched (dicts merge one level)."""
    doc = copy.deepcopy(BASE)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key].update(value)
        else:
            doc[key] = value
    return doc


def make_scene(**overrides):
    return scene_from_dict(scene_doc(**overrides))
