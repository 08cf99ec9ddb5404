"""Per-bit activation means of RBM hashers trained with and without the balance term.

    python3 scripts/bit_balance.py --lambdas 0 0.01 0.1 0.5 --csv-dir out/
"""
import argparse
from pathlib import Path

from nip.postproc import l2_normalize
from nip.rbmh import TrainConfig, fit_rbmh
from nip.retrieval import bit_stats
from nip.synth import SynthSpec, synth_descriptors


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.1])
    ap.add_argument("--bits", type=int, default=32)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--csv-dir", type=Path)
    args = ap.parse_args()

    X, _, _ = synth_descriptors(SynthSpec(n_clusters=args.samples // 10, items_per_cluster=10, shape=None,
                                          dim=args.dim, noise=0.3, seed=1))
    X = l2_normalize(X)
    print("lambda\tmin_mean\tmax_mean\tstd_across_bits\tfinal_recon")
    for lam in args.lambdas:
        cfg = TrainConfig(learning_rate=0.1, epochs=args.epochs, lam=lam, seed=args.seed)
        model, hist = fit_rbmh(X, args.bits, cfg)
        stats = bit_stats(model.hash(X), args.bits)
        print(f"{lam:g}\t{stats.means.min():.3f}\t{stats.means.max():.3f}\t{stats.spread:.4f}"
              f"\t{hist.recon_error[-1]:.4f}")
        if args.csv_dir:
            args.csv_dir.mkdir(parents=True, exist_ok=True)
            (args.csv_dir / f"bits_lambda{lam:g}.csv").write_text(stats.to_csv())


if __name__ == "__main__":
    main()
