"""
Speech-to-lip AU recognition on a synthetic corpus.

The ground-truth generator couples a phone sequence, three lip AUs
(AU24 lip press, AU25 lips part, AU26 jaw drop) and a noisy phone
recognizer whose output O_p is the only evidence at test time.  We

1. sample utterances from it,
2. turn them into training trajectories (true phones, frame-level AU
   labels, recognizer output),
3. learn the joint Phone / AU / O_p network by maximum likelihood,
4. recognize AUs on held-out utterances from O_p alone, and
5. score per-frame decisions and the ROC curve.

Note that O_p is trained on the recognizer's own (imperfect, slightly
delayed) segments, not on a copy of the true phones: with a copy, every
O_p change coincides with a Phone change and the observation model never
learns how far the recognizer can drift.

    python3 demos/04_au_recognition.py
"""
import argparse
import warnings

import numpy as np

from ctbn_au import synthetic
from ctbn_au.aurec import PHONE, build_joint_model, build_training_trajectories, load_segments, recognize
from ctbn_au.errors import NonErgodicWarning
from ctbn_au.learning import fit
from ctbn_au.metrics import evaluate_run, format_metrics_table, roc_curve

RATE = 59.94


def main(n_train, n_test, seed):
    corpus = synthetic.generate_corpus(n_train + n_test, horizon=2.0, seed=seed)
    train, test = corpus[:n_train], corpus[n_train:]

    data = build_training_trajectories(
        [synthetic.to_segment_file(t, PHONE) for t in train],
        [synthetic.au_labels(t, RATE) for t in train],
        synthetic.ALPHABET,
        [synthetic.to_segment_file(t) for t in train],
        aus=synthetic.AUS,
    )
    with warnings.catch_warnings():
        # a few Phone/AU contexts are never visited; their rates fall back to the pseudo counts
        warnings.simplefilter("ignore", NonErgodicWarning)
        model, stats = fit(build_joint_model(synthetic.ALPHABET, synthetic.AUS), data)
    print(f"trained on {n_train} utterances, {stats.total_time:.0f} s of audio; "
          f"{len(stats.zero_dwell_contexts())} unvisited contexts")

    pred = {a: [] for a in synthetic.AUS}
    prob = {a: [] for a in synthetic.AUS}
    truth = {a: [] for a in synthetic.AUS}
    order = []
    for traj in test:
        ev = load_segments(synthetic.to_segment_file(traj), synthetic.ALPHABET)
        rec = recognize(model, ev, RATE, backend="exact")
        lab = synthetic.au_labels(traj, RATE)
        for a in synthetic.AUS:
            pred[a].append(rec.decisions[a])
            prob[a].append(rec.probabilities[a])
            truth[a].append(lab.track(a))
        order.append(synthetic.stop_release_order(rec, traj, ev))

    print(f"\nper-frame scores on {n_test} held-out utterances:")
    print(format_metrics_table(evaluate_run(pred, truth)))
    for a in synthetic.AUS:
        curve = roc_curve(np.concatenate(prob[a]), np.concatenate(truth[a]))
        print(f"{a} AUC {curve.auc:.3f}")
    judged = [o for o in order if o is not None]
    print(f"\n/B/ press-before-release ordering recovered in {sum(judged)}/{len(judged)} utterances")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--train", type=int, default=150)
    ap.add_argument("--test", type=int, default=50)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    main(args.train, args.test, args.seed)
