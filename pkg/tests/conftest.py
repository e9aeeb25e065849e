"""Shared fixtures: a small synthetic molecule dataset with a planted rule.

Labels follow "molecule contains nitrogen", which a one-hot element
featurization can learn quickly; the SMILES are all simple and valid so
ingestion accounting is exact.
"""

import pytest

NITROGEN_SMILES = [
    "CCN", "CN", "NCC", "CC(N)C", "NC(=O)C", "CCCN", "N#CC", "CN(C)C",
    "NCCO", "c1ccncc1", "CNC", "NCCN", "CC(=O)N", "CNCC", "N", "CCCCN",
    "NC(C)=O", "Cn1cccc1", "NCc1ccccc1", "CCNCC",
]

PLAIN_SMILES = [
    "CC", "CCC", "CCCC", "CCO", "CCS", "c1ccccc1", "CC(=O)O", "CCOC",
    "C1CCCCC1", "CS", "OCC", "CC(C)C", "CCCl", "CBr", "CCCO", "CC=C",
    "C#C", "COC", "OC(=O)C", "c1ccoc1",
]


def write_toy_dataset(path, repeat: int = 1) -> int:
    """Write the planted-rule CSV; returns the number of rows."""
    rows = []
    for _ in range(repeat):
        rows.extend((s, 1) for s in NITROGEN_SMILES)
        rows.extend((s, 0) for s in PLAIN_SMILES)
    lines = ["smiles,label"] + [f"{s},{y}" for s, y in rows]
    path.write_text("\n".join(lines) + "\n")
    return len(rows)


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    write_toy_dataset(path)
    return path


@pytest.fixture
def toy_raw_config(toy_csv):
    """Raw config mapping sized for fast test runs."""
    return {
        "config_version": 1,
        "dataset": {
            "name": "toy",
            "path": str(toy_csv),
            "smiles_column": "smiles",
            "label_column": "label",
        },
        "model": {
            "num_layers": 2,
            "hidden_dim": 8,
            "graph_dim": 6,
        },
        "training": {
            "epochs": 3,
            "batch_size": 8,
            "seeds": [0],
        },
        "schedule": {"decay_epochs": [2]},
    }
