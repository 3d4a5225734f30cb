"""Compare the full training objective against classification alone.

Trains the desk-scale model twice on the same corpus and seeds, once with
the pairwise trait terms active and once with alpha = beta = gamma = 0, then
prints both verification summaries. The trait terms should buy a visibly
lower evidence-score error rate.
"""

import argparse
import dataclasses

from phonetrait import presets
from phonetrait.analysis import (
    compute_eer,
    explainability_correlation,
    labelled_scores,
)
from phonetrait.corpus import CorpusIndex, default_inventory, generate_corpus, make_trials
from phonetrait.losses import LossWeights
from phonetrait.scoring import score_trials
from phonetrait.training import train


def summarize(records) -> tuple[float, float, float]:
    final_scores, final_labels = labelled_scores(records, "final")
    evidence_scores, evidence_labels = labelled_scores(records, "evidence")
    return (
        compute_eer(final_scores, final_labels)[0],
        compute_eer(evidence_scores, evidence_labels)[0],
        explainability_correlation(records),
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=None,
                        help="override the preset epoch count for quick runs")
    args = parser.parse_args()

    inventory = default_inventory()
    features, alignments, _ = generate_corpus(**presets.desk_corpus_kwargs(inventory))
    index = CorpusIndex.build(features, alignments)
    trials = make_trials(features, presets.EVAL_N_TARGET, presets.EVAL_N_NONTARGET,
                         presets.TRIAL_SEED)
    model_cfg = presets.desk_model_config()

    print(f"{'run':<16} {'final EER':>10} {'evidence EER':>13} {'correlation':>12}")
    for name, weights in (
        ("full loss", LossWeights()),
        ("class. only", LossWeights(0.0, 0.0, 0.0)),
    ):
        cfg = presets.desk_train_config(weights=weights)
        if args.epochs is not None:
            cfg = dataclasses.replace(cfg, epochs=args.epochs)
        state, _ = train(index, inventory, model_cfg, cfg)
        records = score_trials(state, index, trials, inventory.size)
        final_eer, evidence_eer, correlation = summarize(records)
        print(f"{name:<16} {final_eer:>10.3f} {evidence_eer:>13.3f} {correlation:>12.3f}")


if __name__ == "__main__":
    main()
