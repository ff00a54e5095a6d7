"""End-to-end surrogate pipeline: dataset, training, prediction.

Generates a small labeled dataset of spheroid scattering solutions, trains
the graph network to map incident-field features to surface currents, and
inspects a held-out prediction.  Kept deliberately small so it finishes in
a few minutes on one core; scale the sweep and epochs up for real use.

    python3 demos/03_learn_currents.py
"""

import os
import tempfile

import numpy as np

from graphsolver import (SweepSpec, generate_dataset, split_dataset,
                         load_samples, ModelConfig, TrainConfig, train,
                         evaluate, predict, labels_to_currents)


def main():
    workdir = os.path.join(tempfile.gettempdir(), "graphsolver_demo")
    sweep = SweepSpec(
        kind="spheroid",
        geometry={"Rx": [0.2], "Ry": [0.2], "Rz": [0.2, 0.4, 0.05]},
        theta=(30.0, 90.0, 30.0),
        phi=(90.0, 180.0, 45.0),
        mesh_fraction=0.1,
    )
    print("generating dataset (resumes if rerun) ...")
    manifest = generate_dataset(sweep, workdir, seed=0)
    print(f"  {len(manifest.samples)} samples in {workdir}")

    train_m, test_m = split_dataset(manifest, train_fraction=0.8, seed=0)
    train_set = load_samples(train_m, workdir)
    test_set = load_samples(test_m, workdir)

    mcfg = ModelConfig(hidden=16, gcn_layers=2, kernel_hidden=32,
                       head_hidden=8)
    tcfg = TrainConfig(epochs=40, batch_size=4, base_lr=0.002, seed=0)
    print(f"training {mcfg.hidden}-wide model, {tcfg.epochs} epochs ...")
    best, report, _ = train(train_set, test_set, tcfg, mcfg)
    print(f"  train MSE {report.train_mse[0]:.3e} -> "
          f"{report.train_mse[-1]:.3e}")
    print(f"  best test MSE {min(report.test_mse):.3e} "
          f"(epoch {int(np.argmin(report.test_mse))})")

    metrics = evaluate(best, mcfg, test_set)
    print(f"  mean relative L2 current error on test: "
          f"{metrics.mean_rel_l2:.3f}")

    g = test_set[0]
    pred = predict(best, mcfg, g)
    jp = labels_to_currents(pred)
    jm = labels_to_currents(g.labels)
    i = int(np.abs(jm).sum(axis=1).argmax())
    print(f"\nstrongest-current triangle of one held-out sample:")
    print(f"  solver:  {jm[i]}")
    print(f"  network: {jp[i]}")


if __name__ == "__main__":
    main()
