"""Retrieval mAP of NIP descriptors for different pooling sequences.

    python3 scripts/pooling_sequences.py --noise 0.8
"""
import argparse

import numpy as np

from nip.pooling import nip_descriptors
from nip.postproc import l2_normalize
from nip.retrieval import DescriptorTable, evaluate
from nip.synth import SynthSpec, synth_orbits

SEQUENCES = ["A_T", "M_T", "S_T", "A_S,S_T,M_R", "A_R,A_S,A_T", "A_T,A_S,A_R", "M_R,M_S,M_T", "S_T,A_S,M_R"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--sequences", nargs="+", default=SEQUENCES)
    args = ap.parse_args()

    records, gt = synth_orbits(SynthSpec(100, 4, (6, 3, 64, 3, 3), None, args.noise, args.seed))
    print("sequence\tdim\tmAP")
    for seq in args.sequences:
        descs = nip_descriptors(records, seq, threads=1)
        ids = [d.image_id for d in descs]
        X = l2_normalize(np.stack([d.values for d in descs]))
        rep = evaluate(dict(zip(ids, X)), DescriptorTable(ids, X), gt)
        print(f"{seq}\t{X.shape[1]}\t{rep.map:.4f}")


if __name__ == "__main__":
    main()
