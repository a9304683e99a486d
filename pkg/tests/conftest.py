import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pathgat.graph import build_hetein, recipe_schema


@pytest.fixture(scope="session")
def schema():
    return recipe_schema()


@pytest.fixture
def tiny_graph(schema):
    """Smallest populated instance: one node per type, one edge per bipartite
    relation."""
    return build_hetein(
        schema,
        {"User": 1, "Recipe": 1, "Ingredient": 1},
        {
            "user-recipe": (np.array([0]), np.array([0])),
            "recipe-ingredient": (np.array([0]), np.array([0])),
        },
    )


@pytest.fixture
def shared_user_graph(schema):
    """Two recipes with overlapping audiences: recipe 0 has users {0,1},
    recipe 1 has users {1,2,3}.  Walking recipe-user-recipe gives 2 round
    trips from recipe 0, 3 from recipe 1, 1 crossing, so the similarity
    between the two recipes is 2*1/(2+3) = 0.4."""
    return build_hetein(
        schema,
        {"User": 4, "Recipe": 2, "Ingredient": 0},
        {"user-recipe": (np.array([0, 1, 1, 2, 3]), np.array([0, 0, 1, 1, 1]))},
    )
