"""The time-layer adaptive alignment loss, mechanically and in training.

The head adapts each layer's pooled activations toward a frozen
identity embedding and learns, per flow time, how much each layer
should carry. The gate starts exactly uniform and moves during
training; its heatmap is the fingerprint of where identity lives.
"""

import numpy as np

from flowalign.alignment import AlignConfig, AlignmentHead
from flowalign.harness import FlowConfig, TrainConfig, heatmap_tv, losses_csv_bytes, train_run
from flowalign.synth import DatasetConfig, generate_dataset
from flowalign.encoder import EncoderConfig, train_encoder
from flowalign.tensor import Tensor


def main():
    rng = np.random.default_rng(0)

    print("== the head on its own: distances, gate, entropy")
    n_layers, tap_dim, embed_dim = 4, 8, 6
    head = AlignmentHead(AlignConfig(mode="layer_time"), n_layers, tap_dim, embed_dim)
    B, T = 5, 12
    taps = [Tensor(rng.normal(size=(B, T, tap_dim))) for _ in range(n_layers)]
    valid_len = rng.integers(6, T + 1, size=B)
    e_sa = rng.normal(size=(B, embed_dim))
    e_sa /= np.linalg.norm(e_sa, axis=1, keepdims=True)
    t = rng.uniform(0.0, 1.0, size=B)

    d = head.layer_distances(taps, valid_len, e_sa).data
    print(f"per-layer cosine distances, batch means: {d.mean(axis=0).round(3)}")
    w = head.time_weights(t).data
    print(f"gate at init, one row: {w[0].round(3)} (exactly uniform)")
    loss, parts = head.loss(taps, valid_len, e_sa, t)
    print(
        f"loss {float(loss.data):.4f} = weighted distance {parts['sa_weighted']:.4f}"
        f" - 0.01 * entropy {parts['gate_entropy']:.4f}"
    )

    print()
    print("== paired training: same seeds, with and without the loss")
    ds = generate_dataset(
        DatasetConfig(
            speakers=16,
            test_speakers=4,
            train_utterances=80,
            test_utterances=24,
            tokens_min=6,
            tokens_max=10,
            seed=13,
        )
    )
    enc_a, _ = train_encoder(ds, EncoderConfig(steps=150, batch_size=64))
    enc_b, _ = train_encoder(
        ds,
        EncoderConfig(
            hidden=96, embed_dim=24, seed=23, steps=150, batch_size=64, name="encoder-b"
        ),
    )

    def run(mode, lam=0.5):
        return train_run(
            ds,
            enc_a,
            enc_b,
            FlowConfig(n_blocks=3, hidden=32),
            AlignConfig(mode=mode, lam=lam),
            TrainConfig(
                steps=300,
                batch_size=8,
                adapter_lr_mult=10.0,
                eval_utterances=16,
                eval_ode_steps=8,
                cknna_k=5,
            ),
        )

    base = run("baseline")
    adaptive = run("layer_time")
    off = run("layer_time", lam=0.0)
    print(f"auxiliary loss, first and last step: {adaptive.loss_rows[0][2]:.4f} "
          f"-> {adaptive.loss_rows[-1][2]:.4f}")
    print(f"with lam=0 the run is byte-identical to the baseline: "
          f"{losses_csv_bytes(off.loss_rows) == losses_csv_bytes(base.loss_rows)}")

    print()
    print("== what the loss changes")
    fmt = lambda a: " ".join(f"{v:.3f}" for v in a)
    print(f"per-layer alignment with the identity encoder (baseline): "
          f"{fmt(base.layer_cknna_a)}")
    print(f"per-layer alignment with the identity encoder (adaptive): "
          f"{fmt(adaptive.layer_cknna_a)}")
    print(f"held-out similarity baseline {base.final_sim_a:.3f} vs adaptive "
          f"{adaptive.final_sim_a:.3f}")
    print("the supervision lifts representation alignment, but the prompt")
    print("embedding already conditions every block, so it adds no new")
    print("information about identity; at tiny scale the extra gradient")
    print("taxes reconstruction, and at larger scale the modes reach parity")

    print()
    print("== the gate moved away from uniform")
    tv = heatmap_tv(adaptive.heatmap_initial, adaptive.heatmap_final)
    print(f"total variation between the step-0 and final heatmaps: {tv:.3f}")
    grid = np.linspace(0.0, 1.0, 5)
    w = adaptive.head.heatmap(grid)
    for t_val, row in zip(grid, w):
        bars = " ".join(f"{v:.2f}" for v in row)
        print(f"t={t_val:.2f}: {bars}")


if __name__ == "__main__":
    main()
