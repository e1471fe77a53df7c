"""Regenerate the bundled example files in ``src/gecal/data``.

A Model 1 population of 1000 units (seed 11) and one Poisson sample from it.
"""

from pathlib import Path

import numpy as np

from gecal.design import draw_poisson_sample, generate_population, stream
from gecal.entropy import make_entropy

OUT = Path(__file__).resolve().parents[1] / "src" / "gecal" / "data"
FMT = "%.17g"


def main():
    pop = generate_population("model1", 1000, 11)
    s = draw_poisson_sample(pop, rng=stream(11, 1, 0))
    # simple positive unit costs for the model-assisted variant
    cost = 1.0 + 0.25 * pop.x[:, 1]
    with open(OUT / "sample.csv", "w") as fh:
        fh.write("id,pi,y,x1,x2,c\n")
        for k, i in enumerate(s.indices):
            fh.write(",".join([str(i + 1)] + [FMT % v for v in (pop.pi[i], pop.y[i], *pop.x[i], cost[i])]) + "\n")
    with open(OUT / "totals.csv", "w") as fh:
        fh.write("control_name,value\n")
        fh.write(f"N,{pop.N}\n")
        for j in range(pop.x.shape[1]):
            fh.write(f"x{j + 1},{FMT % pop.x[:, j].sum()}\n")
        for name in ("sq", "el", "et", "set", "ce", "hd", "inv"):
            ent = make_entropy(name)
            fh.write(f"tg_{name},{FMT % np.sum(ent.g(pop.d))}\n")
            fh.write(f"tgc_{name},{FMT % np.sum(ent.g(pop.d) * cost)}\n")
    with open(OUT / "population.csv", "w") as fh:
        fh.write("x1,x2,pi\n")
        for i in range(pop.N):
            fh.write(",".join(FMT % v for v in (*pop.x[i], pop.pi[i])) + "\n")
    (OUT / "study.cfg").write_text(
        "# small smoke-test study\n"
        "model = model1\n"
        "n_pop = 2000\n"
        "reps = 20\n"
        "seed = 20240601\n"
        "entropies = el, et, ce\n"
        "methods = hajek, ds, ds-debias, gec0, gec1, gec2\n"
        "level = 0.95\n")
    print(f"sample n = {s.n}")


if __name__ == "__main__":
    main()
