"""What the search can and cannot tell about a hidden common cause.

H confounds X and Y; X and Y both feed W, and so does Z. With H hidden the
search, asked d-separation questions about the generating DAG, returns a PAG
whose arrowheads into W are certain while the X--Y edge keeps circle marks.
"""

import numpy as np

from edgecal.citest import DSeparation
from edgecal.graph import CausalDag, format_pag
from edgecal.search import search

NAMES = ["X", "Y", "W", "Z"]
H = 4

edges = ((H, 0), (H, 1), (0, 2), (1, 2), (3, 2))
dag = CausalDag(5, edges, {e: 1.0 for e in edges}, np.ones(5))
pag, stats = search(DSeparation(dag, observed=[0, 1, 2, 3]))

print("generating DAG (H hidden): H->X, H->Y, X->W, Y->W, Z->W")
print(f"{stats.num_tests} independence tests; PAG over X, Y, W, Z:")
for line in format_pag(pag).splitlines()[1:]:
    a, mark, b = line.split()
    print(f"  {NAMES[int(a)]} {mark} {NAMES[int(b)]}")
