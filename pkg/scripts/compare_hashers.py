"""Retrieval mAP of every hasher against the uncompressed NIP + L2 upper bound.

    python3 scripts/compare_hashers.py --bits 32 64 128 256
"""
import argparse
import time
from dataclasses import dataclass

import numpy as np

from nip.baselines import PcaHashModel, itq_fit, lsh_fit, pcahash_fit
from nip.pooling import nip_descriptors
from nip.postproc import l2_normalize
from nip.rbmh import TrainConfig, fit_rbmh
from nip.retrieval import DescriptorTable, HashIndex, evaluate
from nip.synth import SynthSpec, synth_orbits


@dataclass
class Experiment:
    clusters: int = 100
    items: int = 4
    shape: tuple = (6, 3, 64, 3, 3)
    noise: float = 0.8
    sequence: str = "A_S,S_T,M_R"
    seed: int = 5
    epochs: int = 1000
    batch_size: int = 50
    learning_rate: float = 0.1
    lam: float = 0.1


def fit(method, X, bits, exp):
    if method == "rbmh":
        cfg = TrainConfig(learning_rate=exp.learning_rate, epochs=exp.epochs, batch_size=exp.batch_size,
                          lam=exp.lam, seed=exp.seed)
        return fit_rbmh(X, bits, cfg)[0]
    if method == "lsh":
        return lsh_fit(X.shape[1], bits, exp.seed)
    if method == "pcahash":
        return PcaHashModel(pcahash_fit(X, bits))
    if method == "itq":
        return itq_fit(X, bits, 50, exp.seed)
    raise ValueError(method)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--methods", nargs="+", default=["rbmh", "itq", "pcahash", "lsh"])
    ap.add_argument("--noise", type=float, default=Experiment.noise)
    ap.add_argument("--seed", type=int, default=Experiment.seed)
    ap.add_argument("--epochs", type=int, default=Experiment.epochs)
    args = ap.parse_args()
    exp = Experiment(noise=args.noise, seed=args.seed, epochs=args.epochs)

    records, gt = synth_orbits(SynthSpec(exp.clusters, exp.items, exp.shape, None, exp.noise, exp.seed))
    descs = nip_descriptors(records, exp.sequence, threads=1)
    ids = [d.image_id for d in descs]
    X = l2_normalize(np.stack([d.values for d in descs]))
    upper = evaluate(dict(zip(ids, X)), DescriptorTable(ids, X), gt).map
    print(f"NIP {exp.sequence} + L2: mAP {upper:.4f} ({len(ids)} items, {X.shape[1]}-D)")
    # PCA-based methods cannot produce more bits than the descriptor has dimensions
    print("method\tbits\tmAP\tratio\tbit_std\tseconds")
    for method in args.methods:
        for bits in args.bits:
            if method in ("pcahash", "itq") and bits > min(X.shape[1], len(ids) - 1):
                continue
            t0 = time.perf_counter()
            codes = fit(method, X, bits, exp).hash(X)
            rep = evaluate(dict(zip(ids, codes)), HashIndex(ids, codes, bits), gt)
            print(f"{method}\t{bits}\t{rep.map:.4f}\t{rep.map / upper:.3f}\t{rep.bits.spread:.4f}"
                  f"\t{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
