"""Regenerate the frozen oracle values: ``python tests/oracles/freeze.py``.

Values come from the standalone oracles (full-gradient descent, sequential
Gibbs), never from the distributed path they are used to check.
"""

import json
from pathlib import Path

from vapps.workloads.lda import sequential_gibbs, synth_corpus, topic_recovery
from vapps.workloads.sgd import make_problem, reference_optimum

OUT = Path(__file__).with_name("frozen.json")

LDA_CORPUS = {"topics": 5, "docs": 500, "vocab": 100, "doc_len": 20, "seed": 7}
LDA_SEEDS = [0, 1, 2, 3, 4]
LDA_SWEEPS = 50


def main():
    suite = make_problem(K=4, T=1000, seed=0)
    corpus = synth_corpus(**LDA_CORPUS)
    big = synth_corpus(5, 500, 1000, 100, 7)
    z, _ = sequential_gibbs(big, 5, 100, 7, track_ll=False)
    baselines = {}
    for s in LDA_SEEDS:
        _, lls = sequential_gibbs(corpus, 5, LDA_SWEEPS, s)
        baselines[str(s)] = lls[-1]
    data = {
        "sgd_suite_x_star": {"K": 4, "T": 1000, "seed": 0, "x_star": reference_optimum(suite)},
        "lda_recovery": {"corpus": [5, 500, 1000, 100, 7], "sweeps": 100, "seed": 7,
                         "cosine": topic_recovery(big, z, 5)},
        "lda_sequential_ll": {"corpus": LDA_CORPUS, "sweeps": LDA_SWEEPS, "final_ll": baselines},
    }
    OUT.write_text(json.dumps(data, indent=2) + "\n")


if __name__ == "__main__":
    main()
